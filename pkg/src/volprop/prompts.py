"""Prompt simulation from ground-truth masks.

Prompts are full ground-truth slice masks at indices chosen by a strategy:
the structure's middle slice, its first and last, first-middle-last, or k
uniformly spaced slices. Budgets can be allocated independently per axis
for three-axis runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigInvalid, EmptyMask, ExtentTooSmall
from .volgrid import Axis, Volume, VolumeKind, reslice


class Strategy(Enum):
    MIDDLE = "middle"
    FIRST_LAST = "first-last"
    FML = "fml"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class StrategySpec:
    """A prompt strategy plus its count parameter for the uniform case."""

    strategy: Strategy
    k: int = 0

    def __post_init__(self) -> None:
        if self.strategy is Strategy.UNIFORM and self.k < 2:
            raise ConfigInvalid(f"uniform prompting needs k >= 2, got {self.k}")

    @property
    def nominal_count(self) -> int:
        return {Strategy.MIDDLE: 1, Strategy.FIRST_LAST: 2, Strategy.FML: 3}.get(
            self.strategy, self.k
        )


def parse_strategy(text: str) -> StrategySpec:
    """Parse "middle" | "first-last" | "fml" | "uniform:k"."""
    if text.startswith("uniform:"):
        try:
            k = int(text.split(":", 1)[1])
        except ValueError:
            raise ConfigInvalid(f"bad uniform prompt count in {text!r}") from None
        return StrategySpec(Strategy.UNIFORM, k)
    for s in (Strategy.MIDDLE, Strategy.FIRST_LAST, Strategy.FML):
        if text == s.value:
            return StrategySpec(s)
    raise ConfigInvalid(
        f"unknown prompt strategy {text!r} (expected middle | first-last | fml | uniform:k)"
    )


@dataclass(frozen=True)
class PromptSet:
    """Ordered (slice_index, mask) prompts along one axis.

    extent is the structure's (first, last) slice range on that axis; the
    engine propagates within it without looking at the ground truth.
    """

    entries: tuple[tuple[int, np.ndarray], ...]
    axis: Axis
    strategy: StrategySpec
    extent: tuple[int, int]

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.entries)

    def mask_at(self, t: int) -> np.ndarray | None:
        for i, m in self.entries:
            if i == t:
                return m
        return None


def structure_extent(gt: Volume, axis: Axis) -> tuple[int, int]:
    """First and last slice indices along axis with any foreground."""
    if gt.kind is not VolumeKind.BINARY_MASK:
        raise EmptyMask(f"structure_extent expects a mask volume, got {gt.kind}")
    other = tuple(a for a in range(3) if a != int(axis))
    nonempty = np.flatnonzero(gt.data.any(axis=other))
    if nonempty.size == 0:
        raise EmptyMask("ground-truth mask has no foreground")
    return int(nonempty[0]), int(nonempty[-1])


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


def prompt_indices(extent: tuple[int, int], spec: StrategySpec) -> tuple[int, ...]:
    """Slice indices for a strategy over a structure extent.

    Middle floors the midpoint; uniform spacing rounds half away from zero.
    """
    first, last = extent
    if spec.strategy is Strategy.MIDDLE:
        return ((first + last) // 2,)
    if spec.strategy is Strategy.FIRST_LAST:
        return (first, last) if last > first else (first,)
    if spec.strategy is Strategy.FML:
        mid = (first + last) // 2
        return tuple(sorted({first, mid, last}))
    k = spec.k
    extent_len = last - first + 1
    if k > extent_len:
        raise ExtentTooSmall(f"uniform:{k} needs at least {k} slices, structure spans {extent_len}")
    idx = sorted({first + _round_half_away(i * (last - first) / (k - 1)) for i in range(k)})
    return tuple(idx)


def simulate_prompts(gt: Volume, axis: Axis, spec: StrategySpec) -> PromptSet:
    """Build ground-truth mask prompts along an axis per the strategy."""
    extent = structure_extent(gt, axis)
    seq = reslice(gt, axis)
    entries = tuple(
        (t, np.ascontiguousarray(seq[t]).astype(bool)) for t in prompt_indices(extent, spec)
    )
    return PromptSet(entries=entries, axis=axis, strategy=spec, extent=extent)


def allocate_three_axis(gt: Volume, spec: StrategySpec) -> dict[Axis, PromptSet]:
    """Independent prompt sets for all three axes with the same strategy."""
    return {axis: simulate_prompts(gt, axis, spec) for axis in Axis}
