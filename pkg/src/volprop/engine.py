"""Propagation driver and segmentation backends.

A propagation pass walks the slices of one axis in one direction,
segmenting each slice against a memory of prompted (conditioned) and
previously segmented (non-conditioned) frames. Passes can be combined
bidirectionally along one axis or across all three axes with sigmoid
logit fusion.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Protocol

import numpy as np
from scipy.ndimage import binary_dilation

from .errors import BackendFailure, DimensionMismatch, EmptyPrompts
from .membank import (
    Direction,
    MemoryEntry,
    MemoryPolicy,
    assign_embedding_slots,
    gate_by_confidence,
    select_conditioned,
    select_noncond,
)
from .preproc import WindowSpec, to_three_channel, window_array
from .profiler import NULL_PROFILER, Stage, StageProfiler
from .prompts import PromptSet, Strategy, StrategySpec, allocate_three_axis, simulate_prompts
from .volgrid import (
    Axis,
    LogitVolume,
    Volume,
    VolumeKind,
    crop_to_roi,
    mask_bbox,
    reorient_to_reference,
    reslice,
)

LOGIT_SCALE = 8.0


class Propagation(Enum):
    FORWARD = "forward"
    FORWARD_BACKWARD = "forward-backward"
    THREE_AXIS = "three-axis"


class SegmentationBackend(Protocol):
    """Per-slice promptable segmenter with memory attention.

    Implementations must be deterministic: identical inputs produce
    identical outputs. The profiler/slice_index keywords of segment() are
    instrumentation hooks; they never affect results.
    """

    def encode_slice(self, image: np.ndarray) -> Any: ...

    def segment(
        self,
        embedding: Any,
        context: list[tuple[MemoryEntry, int]],
        prompt_mask: np.ndarray | None = None,
        *,
        profiler: StageProfiler = NULL_PROFILER,
        slice_index: int = -1,
    ) -> tuple[np.ndarray, float, Any]: ...

    def slot_count(self) -> int: ...

    def input_resolution(self) -> int: ...


@dataclass(frozen=True)
class RunConfig:
    """Resolved per-run settings handed to the engine."""

    propagation: Propagation = Propagation.FORWARD
    prompt_spec: StrategySpec = field(default_factory=lambda: StrategySpec(Strategy.FML))
    policy: MemoryPolicy = field(default_factory=MemoryPolicy)
    window: WindowSpec | None = field(default_factory=WindowSpec)
    clahe_enabled: bool = False
    clahe_clip: float = 2.0
    clahe_tiles: tuple[int, int] = (8, 8)
    crop_enabled: bool = True
    crop_margin: int = 8
    seed: int = 0


def _disk_footprint(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return (yy * yy + xx * xx) <= radius * radius


class SyntheticBackend:
    """Deterministic intensity-tracking stand-in for the real segmenter.

    With a prompt mask: echoes it as +/-LOGIT_SCALE logits at confidence 1.
    Without: picks the highest-priority context entry (non-conditioned
    before conditioned, then lower slot, then higher slice index), dilates
    its stored mask by a Euclidean disk of `dilation_radius`, and keeps
    pixels whose intensity lies within `intensity_tolerance` of the seed
    region's mean intensity on its remembered slice. Confidence is the
    fraction of the seed the prediction retains. An empty context or an
    empty seed mask yields an all-negative slice at confidence 0.

    The attention loop does arithmetic proportional to the attended
    context size so MemoryAttention wall time tracks context length.
    """

    def __init__(
        self,
        intensity_tolerance: float = 0.1,
        dilation_radius: int = 3,
        slots: int = 7,
        attention_reps: int = 6,
        model_scale: str = "small",
    ):
        self.intensity_tolerance = float(intensity_tolerance)
        self.dilation_radius = int(dilation_radius)
        self._slots = int(slots)
        self._attention_reps = int(attention_reps)
        self.model_scale = model_scale
        self._footprint = _disk_footprint(self.dilation_radius)

    def slot_count(self) -> int:
        return self._slots

    def input_resolution(self) -> int:
        return 0  # native resolution, no resizing

    def encode_slice(self, image: np.ndarray) -> np.ndarray:
        if image.ndim != 3 or image.shape[0] != 3:
            raise BackendFailure(f"expected a (3, H, W) slice, got {image.shape}")
        return image[0].astype(np.float64)

    @staticmethod
    def _priority(item: tuple[MemoryEntry, int]) -> tuple[bool, int, int]:
        entry, slot = item
        return (entry.conditioned, slot, -entry.slice_index)

    def segment(
        self,
        embedding: np.ndarray,
        context: list[tuple[MemoryEntry, int]],
        prompt_mask: np.ndarray | None = None,
        *,
        profiler: StageProfiler = NULL_PROFILER,
        slice_index: int = -1,
    ) -> tuple[np.ndarray, float, np.ndarray]:
        plane = embedding
        if prompt_mask is not None:
            with profiler.stage(Stage.DECODE, slice_index):
                logits = np.where(prompt_mask.astype(bool), LOGIT_SCALE, -LOGIT_SCALE)
                confidence = 1.0
        elif not context:
            logits = np.full(plane.shape, -LOGIT_SCALE)
            confidence = 0.0
        else:
            with profiler.stage(Stage.MEMORY_ATTENTION, slice_index):
                acc = 0.0
                for entry, _slot in context:
                    mf = entry.mask_features.astype(np.float64)
                    for _ in range(self._attention_reps):
                        acc += float((mf * plane).sum())
                seed_entry, _ = min(context, key=self._priority)
            with profiler.stage(Stage.DECODE, slice_index):
                seed = seed_entry.mask_features.astype(bool)
                if not seed.any():
                    logits = np.full(plane.shape, -LOGIT_SCALE)
                    confidence = 0.0
                else:
                    region = binary_dilation(seed, structure=self._footprint)
                    seed_mean = float(seed_entry.embedding[seed].mean())
                    kept = region & (np.abs(plane - seed_mean) <= self.intensity_tolerance)
                    logits = np.where(kept, LOGIT_SCALE, -LOGIT_SCALE)
                    confidence = float(np.count_nonzero(kept & seed)) / float(np.count_nonzero(seed))
        with profiler.stage(Stage.MEMORY_ENCODE, slice_index):
            mask_features = logits > 0
        return logits.astype(np.float32), confidence, mask_features


def synthetic_backend(intensity_tolerance: float = 0.1, dilation_radius: int = 3, **kw) -> SyntheticBackend:
    return SyntheticBackend(intensity_tolerance, dilation_radius, **kw)


class CachedBackend:
    """Wraps a backend with a content-addressed slice-embedding cache.

    Enabled by the VOLPROP_CACHE environment variable (a directory).
    Results are byte-identical with or without the cache.
    """

    def __init__(self, inner: SegmentationBackend, cache_dir: str | Path):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def encode_slice(self, image: np.ndarray) -> Any:
        key = hashlib.sha256(
            np.ascontiguousarray(image).tobytes()
            + repr((image.shape, str(image.dtype), type(self.inner).__name__)).encode()
        ).hexdigest()
        path = self.cache_dir / f"{key}.npy"
        if path.exists():
            return np.load(path)
        emb = self.inner.encode_slice(image)
        if isinstance(emb, np.ndarray):
            tmp = path.with_suffix(".tmp.npy")
            np.save(tmp, emb)
            os.replace(tmp, path)
        return emb

    def segment(self, *a, **kw):
        return self.inner.segment(*a, **kw)

    def slot_count(self) -> int:
        return self.inner.slot_count()

    def input_resolution(self) -> int:
        return self.inner.input_resolution()


def maybe_cache_backend(backend: SegmentationBackend) -> SegmentationBackend:
    cache = os.environ.get("VOLPROP_CACHE")
    return CachedBackend(backend, cache) if cache else backend


def propagate_axis(
    seq,
    prompts: PromptSet,
    policy: MemoryPolicy,
    backend: SegmentationBackend,
    direction: Direction = Direction.FWD,
    *,
    preprocess: Callable[[np.ndarray], np.ndarray] | None = None,
    profiler: StageProfiler = NULL_PROFILER,
) -> LogitVolume:
    """One propagation pass along one axis in one direction.

    Coverage runs from the first prompted slice to the structure-extent
    end in traversal order (so a forward pass spans [min prompt, extent
    end], a backward pass [extent start, max prompt]). All prompted slices
    are echoed and admitted as conditioned memory before tracking starts;
    every other covered slice attends to the tau-filtered conditioned set
    plus the gated, slotted non-conditioned window, then joins memory.

    `preprocess` is applied to each raw 2D slice before channel expansion
    (per-slice contrast equalization lives here; windowing happens on the
    volume beforehand).
    """
    if not prompts.entries:
        raise EmptyPrompts("propagation needs at least one prompt")
    if prompts.axis != seq.axis:
        raise DimensionMismatch(f"prompt axis {prompts.axis} != sequence axis {seq.axis}")
    D = len(seq)
    first, last = prompts.extent
    if direction is Direction.FWD:
        start, stop = min(prompts.indices), last
        order = range(start, stop + 1)
    else:
        start, stop = max(prompts.indices), first
        order = range(start, stop - 1, -1)

    S = backend.slot_count()
    embeddings: dict[int, Any] = {}
    with profiler.stage(Stage.STATE_INIT):
        for t in order:
            raw = seq[t]
            plane = preprocess(raw) if preprocess is not None else raw
            with profiler.stage(Stage.ENCODE, t):
                embeddings[t] = backend.encode_slice(to_three_channel(plane))

    slice_shape = seq[0].shape
    logits = np.zeros((D,) + slice_shape, dtype=np.float32)
    coverage = np.zeros((D,) + slice_shape, dtype=bool)

    prompt_lookup = dict(prompts.entries)
    conditioned: dict[int, MemoryEntry] = {}
    for t in sorted(prompts.indices):
        with profiler.stage(Stage.TRACKING, t):
            out, conf, mf = backend.segment(
                embeddings[t], [], prompt_lookup[t], profiler=profiler, slice_index=t
            )
        logits[t] = out
        coverage[t] = True
        conditioned[t] = MemoryEntry(
            slice_index=t, embedding=embeddings[t], mask_features=mf,
            conditioned=True, confidence=conf,
        )

    prompt_index_set = set(prompts.indices)
    noncond: list[MemoryEntry] = []
    for t in order:
        if t in prompt_index_set:
            continue
        with profiler.stage(Stage.TRACKING, t):
            cond_idx = select_conditioned(prompt_index_set, t, D, policy.tau)
            cond_context = [(conditioned[p], 0) for p in sorted(cond_idx)]
            window = select_noncond(noncond, t, policy, direction)
            gated = gate_by_confidence(window, policy.gate_k)
            slotted = assign_embedding_slots(gated, policy, S)
            out, conf, mf = backend.segment(
                embeddings[t], cond_context + slotted, None,
                profiler=profiler, slice_index=t,
            )
        logits[t] = out
        coverage[t] = True
        noncond.append(MemoryEntry(
            slice_index=t, embedding=embeddings[t], mask_features=mf,
            conditioned=False, confidence=conf,
        ))

    return LogitVolume(data=logits, axis=seq.axis, coverage=coverage, frame="stacked")


def run_forward_backward(
    seq,
    prompts: PromptSet,
    policy: MemoryPolicy,
    backend: SegmentationBackend,
    *,
    preprocess: Callable[[np.ndarray], np.ndarray] | None = None,
    profiler: StageProfiler = NULL_PROFILER,
) -> LogitVolume:
    """Independent forward and backward passes, logits averaged on overlap."""
    fwd = propagate_axis(seq, prompts, policy, backend, Direction.FWD,
                         preprocess=preprocess, profiler=profiler)
    bwd = propagate_axis(seq, prompts, policy, backend, Direction.BWD,
                         preprocess=preprocess, profiler=profiler)
    both = fwd.coverage & bwd.coverage
    merged = np.where(both, (fwd.data + bwd.data) / np.float32(2.0), fwd.data + bwd.data)
    return LogitVolume(
        data=merged.astype(np.float32),
        axis=seq.axis,
        coverage=fwd.coverage | bwd.coverage,
        frame="stacked",
    )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def fuse_three_axis(
    l_a: LogitVolume,
    l_c: LogitVolume,
    l_s: LogitVolume,
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> tuple[Volume, np.ndarray]:
    """Sigmoid of the mean logit across the three reoriented passes.

    Voxels an axis never covered contribute logit 0. The three inputs are
    sorted voxelwise before summing so the result is bit-identical under
    any permutation of the arguments. Returns the strict prob > 0.5 mask
    and the probability volume.
    """
    for lv in (l_c, l_s):
        if lv.data.shape != l_a.data.shape:
            raise DimensionMismatch(f"fusion shapes differ: {l_a.data.shape} vs {lv.data.shape}")
    for lv in (l_a, l_c, l_s):
        if lv.frame != "reference":
            raise DimensionMismatch("fusion inputs must be reoriented to the reference frame")
    stacked = np.sort(
        np.stack([l_a.data, l_c.data, l_s.data], axis=0).astype(np.float64), axis=0
    )
    mean = (stacked[0] + stacked[1] + stacked[2]) / 3.0
    prob = _sigmoid(mean)
    mask = (prob > 0.5).astype(np.uint8)
    return Volume(data=mask, spacing=spacing, kind=VolumeKind.BINARY_MASK), prob


def mask_from_logits(lv: LogitVolume, reference: Volume) -> Volume:
    """Strict logit > 0 mask of a single pass, in the reference frame."""
    ref = reorient_to_reference(lv, reference)
    mask = ((ref.data > 0) & ref.coverage).astype(np.uint8)
    return Volume(data=mask, spacing=reference.spacing, kind=VolumeKind.BINARY_MASK,
                  origin=reference.origin)


def run_case(
    volume: Volume,
    gt: Volume,
    cfg: RunConfig,
    backend: SegmentationBackend,
    *,
    profiler: StageProfiler = NULL_PROFILER,
) -> tuple[Volume, Volume]:
    """Full single-structure pipeline: crop, window, propagate, binarize.

    Returns (predicted mask, ground truth) in the evaluation frame (the
    cropped grid when cropping is enabled). Single-axis propagation runs
    along the axial (z) axis.
    """
    if cfg.crop_enabled:
        roi = mask_bbox(gt.data)
        volume = crop_to_roi(volume, roi, cfg.crop_margin)
        gt = crop_to_roi(gt, roi, cfg.crop_margin)

    window = cfg.window if cfg.window is not None else WindowSpec(
        level=1023.5, width=4095.0
    )
    pre = Volume(
        data=window_array(volume.data, window),
        spacing=volume.spacing,
        kind=VolumeKind.INTENSITY,
        orientation=volume.orientation,
        origin=volume.origin,
    )

    preprocess = None
    if cfg.clahe_enabled:
        from .preproc import clahe

        def preprocess(s, _clip=cfg.clahe_clip, _tiles=cfg.clahe_tiles):
            return clahe(s, _clip, _tiles)

    if cfg.propagation is Propagation.THREE_AXIS:
        prompt_map = allocate_three_axis(gt, cfg.prompt_spec)
        reoriented = {}
        for axis in Axis:
            lv = run_forward_backward(
                reslice(pre, axis), prompt_map[axis], cfg.policy, backend,
                preprocess=preprocess, profiler=profiler,
            )
            reoriented[axis] = reorient_to_reference(lv, pre)
        pred, _prob = fuse_three_axis(
            reoriented[Axis.AXIAL], reoriented[Axis.CORONAL], reoriented[Axis.SAGITTAL],
            spacing=pre.spacing,
        )
        pred = Volume(data=pred.data, spacing=pre.spacing, kind=VolumeKind.BINARY_MASK,
                      origin=pre.origin)
    else:
        prompts = simulate_prompts(gt, Axis.AXIAL, cfg.prompt_spec)
        seq = reslice(pre, Axis.AXIAL)
        if cfg.propagation is Propagation.FORWARD:
            lv = propagate_axis(seq, prompts, cfg.policy, backend, Direction.FWD,
                                preprocess=preprocess, profiler=profiler)
        else:
            lv = run_forward_backward(seq, prompts, cfg.policy, backend,
                                      preprocess=preprocess, profiler=profiler)
        pred = mask_from_logits(lv, pre)

    return pred, gt
