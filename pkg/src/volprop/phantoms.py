"""Analytic CT phantoms for end-to-end tests and demos.

Each phantom returns an intensity volume in HU plus its exact ground
truth, so segmentation quality has a closed-form oracle. The suite writer
emits NIfTI pairs and a JSON-lines manifest the CLI can run directly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .volgrid import Volume, VolumeKind, save_volume

FOREGROUND_HU = 1000.0
BACKGROUND_HU = -1000.0


def sphere_phantom(
    size: int = 64,
    radius: float = 10.0,
    center: tuple[float, float, float] | None = None,
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> tuple[Volume, Volume]:
    """Uniform sphere on uniform background."""
    if center is None:
        c = (size - 1) / 2.0
        center = (c, c, c)
    idx = np.indices((size, size, size), dtype=np.float64)
    d2 = sum((idx[a] - center[a]) ** 2 for a in range(3))
    mask = d2 <= radius * radius
    data = np.where(mask, FOREGROUND_HU, BACKGROUND_HU).astype(np.int16)
    vol = Volume(data=data, spacing=spacing, kind=VolumeKind.INTENSITY)
    gt = Volume(data=mask.astype(np.uint8), spacing=spacing, kind=VolumeKind.BINARY_MASK)
    return vol, gt


def _capsule_mask(
    shape: tuple[int, int, int],
    start: tuple[float, float, float],
    end: tuple[float, float, float],
    radius: float,
) -> np.ndarray:
    """Voxels within `radius` of the segment start-end (a capsule)."""
    p = np.stack(np.indices(shape, dtype=np.float64), axis=-1)
    a = np.asarray(start, dtype=np.float64)
    b = np.asarray(end, dtype=np.float64)
    ab = b - a
    denom = float(ab @ ab)
    t = np.clip(((p - a) @ ab) / denom, 0.0, 1.0) if denom > 0 else np.zeros(shape)
    closest = a + t[..., None] * ab
    d2 = ((p - closest) ** 2).sum(axis=-1)
    return d2 <= radius * radius


def adversarial_phantom(
    size: int = 64,
    depth: int = 100,
    radius: float = 6.0,
) -> tuple[Volume, Volume]:
    """Slanted target capsule plus an identical-intensity straight distractor.

    The target runs from (16, 32) at z=10 to (48, 32) at z=90. The
    distractor sits at (48, 32) for z in [10, 35], i.e. exactly where the
    target's far end will be, so memory that trusts a distant prompt locks
    onto the wrong structure while distance-filtered memory tracks the
    target. Ground truth is the target only.
    """
    shape = (size, size, depth)
    scale = size / 64.0
    target = _capsule_mask(
        shape, (16 * scale, 32 * scale, 10), (48 * scale, 32 * scale, depth - 10), radius
    )
    distractor = _capsule_mask(
        shape, (48 * scale, 32 * scale, 10), (48 * scale, 32 * scale, 35), radius
    )
    distractor &= ~target
    data = np.where(target | distractor, FOREGROUND_HU, BACKGROUND_HU).astype(np.int16)
    vol = Volume(data=data, kind=VolumeKind.INTENSITY)
    gt = Volume(data=target.astype(np.uint8), kind=VolumeKind.BINARY_MASK)
    return vol, gt


def write_phantom_suite(
    out_dir: str | Path,
    count: int = 10,
    kind: str = "sphere",
    size: int = 64,
    seed: int = 0,
) -> Path:
    """Write `count` phantom volume/mask pairs plus a runnable manifest.

    Sphere phantoms vary radius and center deterministically from the
    seed; the adversarial phantom is fixed by construction. Returns the
    manifest path.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for i in range(count):
        if kind == "sphere":
            radius = float(rng.uniform(8.0, 12.0))
            wiggle = rng.uniform(-4.0, 4.0, size=3)
            c = (size - 1) / 2.0
            vol, gt = sphere_phantom(size=size, radius=radius,
                                     center=(c + wiggle[0], c + wiggle[1], c + wiggle[2]))
        elif kind == "adversarial":
            vol, gt = adversarial_phantom(size=size)
        else:
            raise ValueError(f"unknown phantom kind {kind!r}")
        case_id = f"{kind}-{i:03d}"
        vol_path = out / f"{case_id}_ct.nii.gz"
        mask_path = out / f"{case_id}_mask.nii.gz"
        save_volume(vol, vol_path)
        save_volume(gt, mask_path)
        lines.append({
            "case_id": case_id,
            "target_class": kind,
            "volume_path": str(vol_path),
            "mask_path": str(mask_path),
        })
    manifest = out / "manifest.jsonl"
    header = {"schema": 1, "seed": seed, "split": f"phantom-{kind}", "rules_hash": ""}
    with manifest.open("w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for line in lines:
            f.write(json.dumps(line, sort_keys=True) + "\n")
    return manifest
