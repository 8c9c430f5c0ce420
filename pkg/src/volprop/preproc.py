"""CT intensity preprocessing.

Hounsfield windowing with linear normalization to [0,1], contrast-limited
adaptive histogram equalization on normalized slices, and three-channel
expansion for the encoder. All functions are pure and never change
dimensions or spacing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import TileTooSmall
from .volgrid import Volume, VolumeKind

# Standard radiological bone window; overridable via config.
BONE_WINDOW_LEVEL = 400.0
BONE_WINDOW_WIDTH = 1800.0

# Window spanning the full 12-bit HU range, used when diagnostic windowing
# is disabled so the encoder still sees [0,1].
FULL_RANGE_LEVEL = 1023.5
FULL_RANGE_WIDTH = 4095.0

_CLAHE_BINS = 256


@dataclass(frozen=True)
class WindowSpec:
    """Intensity window: center `level` and total `width`, both in HU."""

    level: float = BONE_WINDOW_LEVEL
    width: float = BONE_WINDOW_WIDTH

    def __post_init__(self) -> None:
        if self.width <= 0:
            raise ValueError(f"window width must be positive, got {self.width}")


def window_array(a: np.ndarray, w: WindowSpec) -> np.ndarray:
    lo = w.level - w.width / 2.0
    out = (a.astype(np.float64) - lo) / w.width
    return np.clip(out, 0.0, 1.0)


def hu_window(v: Volume, w: WindowSpec) -> Volume:
    """Clamp to [level - width/2, level + width/2], then map linearly to [0,1].

    Monotone non-decreasing per voxel.
    """
    if v.kind is not VolumeKind.INTENSITY:
        raise ValueError(f"hu_window expects an intensity volume, got {v.kind}")
    return replace(v, data=window_array(v.data, w))


def _tile_lut(tile: np.ndarray, clip_limit: float) -> np.ndarray:
    """Clipped-histogram equalization mapping for one tile.

    clip_limit is a multiple of the mean bin count; math.inf disables
    clipping. Clipped excess is redistributed uniformly.
    """
    bins = np.minimum((tile * _CLAHE_BINS).astype(np.int64), _CLAHE_BINS - 1)
    hist = np.bincount(bins.ravel(), minlength=_CLAHE_BINS).astype(np.float64)
    if math.isfinite(clip_limit):
        limit = clip_limit * tile.size / _CLAHE_BINS
        excess = np.maximum(hist - limit, 0.0).sum()
        hist = np.minimum(hist, limit) + excess / _CLAHE_BINS
    cdf = np.cumsum(hist)
    return cdf / cdf[-1]


def clahe(slice2d: np.ndarray, clip_limit: float = 2.0, tiles: tuple[int, int] = (8, 8)) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization on a [0,1] slice.

    The slice is divided into tiles x tiles regions; each gets a clipped
    equalization mapping, and pixels blend the four nearest tile mappings
    bilinearly (clamped at the borders).
    """
    h, w = slice2d.shape
    ty, tx = tiles

    # Tile boundaries; the last tile absorbs the remainder.
    ys = [round(i * h / ty) for i in range(ty + 1)]
    xs = [round(i * w / tx) for i in range(tx + 1)]
    luts = np.empty((ty, tx, _CLAHE_BINS), dtype=np.float64)
    centers_y = np.empty(ty)
    centers_x = np.empty(tx)
    for i in range(ty):
        for j in range(tx):
            tile = slice2d[ys[i]:ys[i + 1], xs[j]:xs[j + 1]]
            if tile.size < 2:
                raise TileTooSmall(f"tile ({i},{j}) has {tile.size} pixels, need at least 2")
            luts[i, j] = _tile_lut(tile, clip_limit)
    for i in range(ty):
        centers_y[i] = (ys[i] + ys[i + 1] - 1) / 2.0
    for j in range(tx):
        centers_x[j] = (xs[j] + xs[j + 1] - 1) / 2.0

    bins = np.minimum((slice2d * _CLAHE_BINS).astype(np.int64), _CLAHE_BINS - 1)

    # Fractional tile coordinates of every pixel, clamped to the center grid.
    yy = np.arange(h, dtype=np.float64)
    xx = np.arange(w, dtype=np.float64)
    fy = np.interp(yy, centers_y, np.arange(ty, dtype=np.float64))
    fx = np.interp(xx, centers_x, np.arange(tx, dtype=np.float64))
    y0 = np.clip(np.floor(fy).astype(np.int64), 0, ty - 1)
    x0 = np.clip(np.floor(fx).astype(np.int64), 0, tx - 1)
    y1 = np.minimum(y0 + 1, ty - 1)
    x1 = np.minimum(x0 + 1, tx - 1)
    wy = (fy - y0)[:, None]
    wx = (fx - x0)[None, :]

    y0g = y0[:, None]
    y1g = y1[:, None]
    x0g = x0[None, :]
    x1g = x1[None, :]
    v00 = luts[y0g, x0g, bins]
    v01 = luts[y0g, x1g, bins]
    v10 = luts[y1g, x0g, bins]
    v11 = luts[y1g, x1g, bins]
    out = (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11)
    return np.clip(out, 0.0, 1.0)


def to_three_channel(slice2d: np.ndarray) -> np.ndarray:
    """Replicate a [0,1] slice into three identical channels, shape (3, H, W)."""
    return np.repeat(slice2d[None, :, :], 3, axis=0)
