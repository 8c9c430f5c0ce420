"""Volume-aware memory bank policies.

A propagation pass keeps two pools: conditioned entries (prompted slices,
zero temporal offset) and non-conditioned entries (previously segmented
slices holding a temporal-embedding slot). The policy knobs here mirror
the inference-time design space: a normalized-distance threshold tau on
conditioned memory, a non-conditioned window of size capacity sampled at
a stride, top-k confidence gating, and the two-entry first/last slot
remap ("intelligent slicing").
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any

from .errors import SlotOverflow


class Direction(Enum):
    FWD = 1
    BWD = -1


@dataclass
class MemoryEntry:
    """One remembered frame: backend handles plus selection metadata."""

    slice_index: int
    embedding: Any
    mask_features: Any
    conditioned: bool
    confidence: float = 1.0


@dataclass(frozen=True)
class MemoryPolicy:
    """Inference-time memory knobs.

    tau filters conditioned entries by |p - t| / D; capacity and stride
    shape the non-conditioned window; gate_k keeps the top-k most
    confident non-conditioned entries (0 disables); intelligent_slicing
    retains the two most recent entries on slots {0, S-1} and forces
    capacity to 2.
    """

    tau: float = 1.0
    capacity: int = 6
    stride: int = 1
    gate_k: int = 0
    intelligent_slicing: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must be in [0,1], got {self.tau}")
        if self.capacity < 0:
            raise ValueError(f"capacity must be >= 0, got {self.capacity}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.gate_k < 0:
            raise ValueError(f"gate_k must be >= 0, got {self.gate_k}")
        if self.intelligent_slicing and self.capacity != 2:
            object.__setattr__(self, "capacity", 2)


def select_conditioned(prompt_indices: set[int], t: int, D: int, tau: float) -> set[int]:
    """Prompted slices within normalized distance tau of frame t.

    Normalization divides by the full sequence length D; the comparison is
    inclusive, so tau = 1.0 always retains every prompt.
    """
    return {p for p in prompt_indices if abs(p - t) / D <= tau}


def select_noncond(
    processed: list[MemoryEntry],
    t: int,
    policy: MemoryPolicy,
    direction: Direction = Direction.FWD,
) -> list[MemoryEntry]:
    """Non-conditioned context for frame t, most recent first.

    Candidates are the slices at offsets 1, 1+stride, 1+2*stride, ...
    behind t in traversal order (capacity of them); offsets that were
    never processed (or were prompted) are skipped, not substituted.
    Intelligent slicing ignores offsets and takes exactly the two most
    recently processed entries.
    """
    if policy.intelligent_slicing:
        return list(processed[-2:][::-1])
    if policy.capacity == 0:
        return []
    by_slice = {e.slice_index: e for e in processed}
    step = direction.value
    out = []
    for k in range(policy.capacity):
        idx = t - step * (1 + policy.stride * k)
        if idx in by_slice:
            out.append(by_slice[idx])
    return out


def gate_by_confidence(selected: list[MemoryEntry], gate_k: int) -> list[MemoryEntry]:
    """Keep the gate_k most confident entries; ties prefer higher slice index.

    gate_k = 0 (or >= len) is the identity. Survivors keep their original
    relative order so slot assignment still sees recency order.
    """
    if gate_k == 0 or gate_k >= len(selected):
        return list(selected)
    ranked = sorted(selected, key=lambda e: (e.confidence, e.slice_index), reverse=True)
    keep = {id(e) for e in ranked[:gate_k]}
    return [e for e in selected if id(e) in keep]


def assign_embedding_slots(
    selected: list[MemoryEntry],
    policy: MemoryPolicy,
    S: int,
) -> list[tuple[MemoryEntry, int]]:
    """Attach temporal-embedding slots to a recency-ordered selection.

    Default: the i-th most recent entry takes slot i. Intelligent slicing:
    most recent takes slot 0, the second takes slot S-1.
    """
    if len(selected) > S:
        raise SlotOverflow(f"{len(selected)} entries for {S} slots")
    if policy.intelligent_slicing:
        if len(selected) > 2:
            raise SlotOverflow(f"intelligent slicing got {len(selected)} entries, max 2")
        slots = [0, S - 1]
        return [(e, slots[i]) for i, e in enumerate(selected)]
    return [(e, i) for i, e in enumerate(selected)]
