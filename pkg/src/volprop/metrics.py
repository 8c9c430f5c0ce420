"""Segmentation quality metrics and embedding-similarity analysis.

Dice and IoU are exact set-count formulas. The Hausdorff distance is the
exact symmetric max-min Euclidean distance between foreground voxel
centers in millimeters; the surface extraction is a lossless speedup of
the all-pairs definition, because for finite voxel sets the farthest
point's nearest neighbor always lies on the target's surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_erosion
from scipy.spatial import cKDTree

from .errors import BothEmpty, DimensionMismatch, EitherEmpty, ZeroVector


@dataclass
class MetricsRecord:
    """Per-structure scores for one case under one configuration."""

    structure: str
    dice: float
    iou: float
    hausdorff_mm: float | None
    config_id: str = ""
    case_id: str = ""
    timings: dict[str, float] = field(default_factory=dict)


def _counts(P: np.ndarray, G: np.ndarray) -> tuple[int, int, int]:
    if P.shape != G.shape:
        raise DimensionMismatch(f"mask shapes differ: {P.shape} vs {G.shape}")
    p = P.astype(bool)
    g = G.astype(bool)
    inter = int(np.count_nonzero(p & g))
    return inter, int(np.count_nonzero(p)), int(np.count_nonzero(g))


def dice(P: np.ndarray, G: np.ndarray) -> float:
    """2|P∩G| / (|P| + |G|). Undefined (BothEmpty) when both masks are empty."""
    inter, np_, ng = _counts(P, G)
    if np_ == 0 and ng == 0:
        raise BothEmpty("dice of two empty masks is undefined")
    return 2.0 * inter / (np_ + ng)


def iou(P: np.ndarray, G: np.ndarray) -> float:
    """|P∩G| / |P∪G|. Undefined (BothEmpty) when both masks are empty."""
    inter, np_, ng = _counts(P, G)
    union = np_ + ng - inter
    if union == 0:
        raise BothEmpty("iou of two empty masks is undefined")
    return inter / union


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with at least one six-connected background neighbor.

    The volume border counts as background, so erosion uses zero padding.
    """
    m = mask.astype(bool)
    structure = np.zeros((3, 3, 3), dtype=bool)
    structure[1, 1, :] = structure[1, :, 1] = structure[:, 1, 1] = True
    interior = binary_erosion(m, structure=structure, border_value=0)
    return m & ~interior


def _directed_max_mm(
    src: np.ndarray, dst: np.ndarray, spacing: tuple[float, float, float]
) -> float:
    """max over src voxels of the distance to the nearest dst voxel, in mm.

    Voxels present in both sets contribute 0. The nearest-neighbor search
    runs against dst's surface only, which cannot change any distance: a
    non-surface dst voxel is enclosed, so some surface voxel of dst lies
    on the segment toward any outside point, at most as far away.
    """
    probe = src & ~dst
    if not probe.any():
        return 0.0
    sp = np.asarray(spacing, dtype=np.float64)
    dst_pts = np.argwhere(surface_voxels(dst)).astype(np.float64) * sp
    probe_pts = np.argwhere(probe).astype(np.float64) * sp
    d, _ = cKDTree(dst_pts).query(probe_pts, k=1)
    return float(np.max(d))


def hausdorff_mm(
    P: np.ndarray,
    G: np.ndarray,
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0),
    percentile: float | None = None,
) -> float:
    """Exact symmetric Hausdorff distance between voxel centers, millimeters.

    percentile (e.g. 95) switches to the percentile of the pooled directed
    distances instead of the maximum; the default is the true maximum.
    """
    if P.shape != G.shape:
        raise DimensionMismatch(f"mask shapes differ: {P.shape} vs {G.shape}")
    p = P.astype(bool)
    g = G.astype(bool)
    if not p.any() or not g.any():
        raise EitherEmpty("hausdorff needs both masks nonempty")
    if percentile is None:
        return max(_directed_max_mm(p, g, spacing), _directed_max_mm(g, p, spacing))
    sp = np.asarray(spacing, dtype=np.float64)
    g_surf = np.argwhere(surface_voxels(g)).astype(np.float64) * sp
    p_surf = np.argwhere(surface_voxels(p)).astype(np.float64) * sp
    p_idx = np.argwhere(p)
    g_idx = np.argwhere(g)
    pg = cKDTree(g_surf).query(p_idx.astype(np.float64) * sp, k=1)[0]
    gp = cKDTree(p_surf).query(g_idx.astype(np.float64) * sp, k=1)[0]
    # voxels shared by both masks are at distance zero
    d_pg = np.where(g[tuple(p_idx.T)], 0.0, pg)
    d_gp = np.where(p[tuple(g_idx.T)], 0.0, gp)
    pooled = np.concatenate([d_pg, d_gp])
    return float(np.percentile(pooled, percentile))


def cosine_similarity_matrix(vectors: list[np.ndarray]) -> np.ndarray:
    """Pairwise cosine similarities; symmetric with unit diagonal."""
    mat = np.asarray(vectors, dtype=np.float64)
    if mat.ndim != 2:
        raise DimensionMismatch("vectors must share a common length")
    norms = np.linalg.norm(mat, axis=1)
    if (norms == 0).any():
        raise ZeroVector(f"vector {int(np.argmin(norms))} has zero norm")
    unit = mat / norms[:, None]
    out = unit @ unit.T
    np.fill_diagonal(out, 1.0)
    return np.clip(out, -1.0, 1.0)


def aggregate(records: list[MetricsRecord]) -> dict:
    """Per-class and overall mean/std of each metric.

    Records with absent Hausdorff values are excluded from the HD mean and
    counted in hd_excluded. Std is population (ddof 0).
    """
    if not records:
        return {"classes": {}, "overall": None}

    def summarize(group: list[MetricsRecord]) -> dict:
        dices = np.array([r.dice for r in group], dtype=np.float64)
        ious = np.array([r.iou for r in group], dtype=np.float64)
        hds = np.array([r.hausdorff_mm for r in group if r.hausdorff_mm is not None])
        out = {
            "n": len(group),
            "dice_mean": float(dices.mean()),
            "dice_std": float(dices.std()),
            "iou_mean": float(ious.mean()),
            "iou_std": float(ious.std()),
            "hd_mm_mean": float(hds.mean()) if hds.size else None,
            "hd_mm_std": float(hds.std()) if hds.size else None,
            "hd_excluded": len(group) - int(hds.size),
        }
        return out

    classes: dict[str, list[MetricsRecord]] = {}
    for r in records:
        classes.setdefault(r.structure, []).append(r)
    return {
        "classes": {name: summarize(group) for name, group in sorted(classes.items())},
        "overall": summarize(records),
    }
