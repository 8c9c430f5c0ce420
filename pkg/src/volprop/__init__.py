"""Volume-aware segmentation propagation and evaluation harness."""

from .engine import (
    Propagation,
    RunConfig,
    SegmentationBackend,
    SyntheticBackend,
    fuse_three_axis,
    propagate_axis,
    run_case,
    run_forward_backward,
    synthetic_backend,
)
from .errors import VolpropError
from .membank import Direction, MemoryEntry, MemoryPolicy
from .metrics import MetricsRecord, aggregate, cosine_similarity_matrix, dice, hausdorff_mm, iou
from .preproc import WindowSpec, clahe, hu_window, to_three_channel
from .prompts import PromptSet, Strategy, StrategySpec, allocate_three_axis, simulate_prompts, structure_extent
from .volgrid import (
    Axis,
    LogitVolume,
    Orientation,
    SliceSequence,
    Volume,
    VolumeKind,
    crop_to_roi,
    load_volume,
    reorient_to_reference,
    reslice,
    save_volume,
)

__version__ = "0.1.0"

__all__ = [
    "Axis", "Direction", "LogitVolume", "MemoryEntry", "MemoryPolicy",
    "MetricsRecord", "Orientation", "Propagation", "PromptSet", "RunConfig",
    "SegmentationBackend", "SliceSequence", "Strategy", "StrategySpec",
    "SyntheticBackend", "Volume", "VolumeKind", "VolpropError", "WindowSpec",
    "aggregate", "allocate_three_axis", "clahe", "cosine_similarity_matrix",
    "crop_to_roi", "dice", "fuse_three_axis", "hausdorff_mm", "hu_window",
    "iou", "load_volume", "propagate_axis", "reorient_to_reference",
    "reslice", "run_case", "run_forward_backward", "save_volume",
    "simulate_prompts", "structure_extent", "synthetic_backend",
    "to_three_channel",
]
