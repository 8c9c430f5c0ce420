"""Core volumetric data model.

Volumes are 3D scalar grids indexed (x, y, z) with physical spacing in
millimeters. Files are read and written as NIfTI-1 (.nii / .nii.gz),
little-endian, datatypes uint8 / int16 / float32. Loaded volumes are
normalized to a canonical RAS-aligned frame; the transform applied at
load time is recorded on the volume so it can be round-tripped.
"""

from __future__ import annotations

import gzip
import json
import struct
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyRoi,
    IoFailure,
    MalformedHeader,
    UnsupportedDatatype,
)


class Axis(IntEnum):
    """Volume axis. The integer value is the array axis of Volume.data."""

    SAGITTAL = 0  # x
    CORONAL = 1   # y
    AXIAL = 2     # z


class VolumeKind(Enum):
    INTENSITY = "intensity"
    LOGIT = "logit"
    BINARY_MASK = "mask"


@dataclass(frozen=True)
class Orientation:
    """Axis permutation plus flip flags, applied as flip-then-permute.

    perm[j] is the destination axis of source axis j; flips[j] reverses
    source axis j before permuting. identity() is the canonical frame.
    """

    perm: tuple[int, int, int] = (0, 1, 2)
    flips: tuple[bool, bool, bool] = (False, False, False)

    def apply(self, data: np.ndarray) -> np.ndarray:
        out = data
        for j in range(3):
            if self.flips[j]:
                out = np.flip(out, axis=j)
        axes = np.argsort(self.perm)
        return np.transpose(out, axes)

    def apply_spacing(self, spacing: tuple[float, float, float]) -> tuple[float, float, float]:
        out = [0.0, 0.0, 0.0]
        for j in range(3):
            out[self.perm[j]] = spacing[j]
        return (out[0], out[1], out[2])

    def inverse(self) -> "Orientation":
        inv_perm = [0, 0, 0]
        new_flips = [False, False, False]
        for j in range(3):
            inv_perm[self.perm[j]] = j
            new_flips[self.perm[j]] = self.flips[j]
        return Orientation(tuple(inv_perm), tuple(new_flips))

    def is_identity(self) -> bool:
        return self.perm == (0, 1, 2) and not any(self.flips)


@dataclass(frozen=True)
class Volume:
    """3D scalar grid with physical spacing.

    data is indexed (x, y, z). orientation records the file-to-canonical
    transform applied at load (identity for volumes built in memory).
    origin is the voxel offset of this volume inside its parent grid,
    nonzero only for cropped volumes.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    kind: VolumeKind = VolumeKind.INTENSITY
    orientation: Orientation = field(default_factory=Orientation)
    origin: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self) -> None:
        if self.data.ndim != 3:
            raise DimensionMismatch(f"volume data must be 3D, got {self.data.ndim}D")
        if any(d < 1 for d in self.data.shape):
            raise DimensionMismatch(f"all dimensions must be >= 1, got {self.data.shape}")
        if any(s <= 0 for s in self.spacing):
            raise DimensionMismatch(f"spacing must be positive, got {self.spacing}")
        if self.kind is VolumeKind.BINARY_MASK:
            vals = np.unique(self.data)
            if not np.isin(vals, (0, 1)).all():
                raise DimensionMismatch("mask volume contains values outside {0, 1}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape  # type: ignore[return-value]


@dataclass(frozen=True)
class SliceSequence:
    """Ordered 2D slices of a volume along one axis.

    Slice t is the 2D plane at index t along `axis`; its rows and columns
    are the two remaining volume axes in ascending order.
    """

    source: Volume
    axis: Axis

    def __len__(self) -> int:
        return self.source.data.shape[self.axis]

    def __getitem__(self, t: int) -> np.ndarray:
        return np.take(self.source.data, t, axis=int(self.axis))

    def __iter__(self):
        for t in range(len(self)):
            yield self[t]


@dataclass(frozen=True)
class LogitVolume:
    """Per-voxel logits from one propagation pass along one axis.

    data and coverage are stacked slice-first while frame == "stacked"
    (axis 0 is the traversal axis, the remaining two are the other volume
    axes ascending); after reorient_to_reference, frame == "reference" and
    both arrays are indexed (x, y, z). coverage marks voxels the pass
    actually produced; everything else holds logit 0.
    """

    data: np.ndarray
    axis: Axis
    coverage: np.ndarray
    frame: str = "stacked"

    def __post_init__(self) -> None:
        if self.data.shape != self.coverage.shape:
            raise DimensionMismatch(
                f"logit/coverage shape mismatch: {self.data.shape} vs {self.coverage.shape}"
            )
        if self.frame not in ("stacked", "reference"):
            raise DimensionMismatch(f"unknown frame {self.frame!r}")


def reslice(v: Volume, axis: Axis) -> SliceSequence:
    """View a volume as an ordered sequence of 2D slices along an axis."""
    return SliceSequence(source=v, axis=axis)


def stack_slices(slices: list[np.ndarray], axis: Axis, like: Volume) -> Volume:
    """Rebuild a volume from its reslice(axis) output. Inverse of reslice."""
    stacked = np.stack(slices, axis=int(axis))
    if stacked.shape != like.data.shape:
        raise DimensionMismatch(f"stacked shape {stacked.shape} != source {like.data.shape}")
    return replace(like, data=stacked)


def reorient_to_reference(l: LogitVolume, reference: Volume) -> LogitVolume:
    """Bring a stacked per-axis logit volume into the reference (x,y,z) frame.

    Uses the recorded axis metadata only; never guesses from shape.
    """
    if l.frame == "reference":
        if l.data.shape != reference.data.shape:
            raise DimensionMismatch(
                f"reference-frame logits {l.data.shape} != reference {reference.data.shape}"
            )
        return l
    data = np.moveaxis(l.data, 0, int(l.axis))
    coverage = np.moveaxis(l.coverage, 0, int(l.axis))
    if data.shape != reference.data.shape:
        raise DimensionMismatch(
            f"axis {l.axis.name} logits reorient to {data.shape}, "
            f"reference is {reference.data.shape}"
        )
    return LogitVolume(data=data, axis=l.axis, coverage=coverage, frame="reference")


def crop_to_roi(
    v: Volume,
    roi: tuple[tuple[int, int], tuple[int, int], tuple[int, int]],
    margin: int = 0,
) -> Volume:
    """Crop to a half-open voxel box expanded by `margin` per side, clamped.

    The crop offset is recorded in Volume.origin so masks map back.
    """
    lo = []
    hi = []
    for ax in range(3):
        a, b = roi[ax]
        if b <= a:
            raise EmptyRoi(f"roi is empty along axis {ax}: [{a}, {b})")
        if a < 0 or b > v.data.shape[ax]:
            raise EmptyRoi(f"roi [{a}, {b}) outside volume along axis {ax}")
        lo.append(max(0, a - margin))
        hi.append(min(v.data.shape[ax], b + margin))
    data = v.data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]]
    origin = (v.origin[0] + lo[0], v.origin[1] + lo[1], v.origin[2] + lo[2])
    return replace(v, data=data, origin=origin)


def mask_bbox(mask: np.ndarray) -> tuple[tuple[int, int], tuple[int, int], tuple[int, int]]:
    """Half-open bounding box of a mask's foreground."""
    if not mask.any():
        raise EmptyRoi("mask has no foreground")
    out = []
    for ax in range(3):
        other = tuple(a for a in range(3) if a != ax)
        proj = mask.any(axis=other)
        idx = np.flatnonzero(proj)
        out.append((int(idx[0]), int(idx[-1]) + 1))
    return (out[0], out[1], out[2])


def uncrop(v: Volume, full_shape: tuple[int, int, int], fill=0) -> Volume:
    """Zero-pad a cropped volume back to its parent grid using Volume.origin."""
    out = np.full(full_shape, fill, dtype=v.data.dtype)
    x, y, z = v.origin
    dx, dy, dz = v.data.shape
    if x + dx > full_shape[0] or y + dy > full_shape[1] or z + dz > full_shape[2]:
        raise DimensionMismatch(f"crop at {v.origin} size {v.data.shape} exceeds {full_shape}")
    out[x:x + dx, y:y + dy, z:z + dz] = v.data
    return replace(v, data=out, origin=(0, 0, 0))


def write_crop_sidecar(path: str | Path, v: Volume, margin: int) -> None:
    """Record a crop offset next to a saved volume: {origin, margin}."""
    payload = {"origin": list(v.origin), "margin": int(margin)}
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def read_crop_sidecar(path: str | Path) -> tuple[tuple[int, int, int], int]:
    raw = json.loads(Path(path).read_text())
    o = raw["origin"]
    return (int(o[0]), int(o[1]), int(o[2])), int(raw["margin"])


# --- NIfTI-1 file IO ---
#
# 348-byte header, little-endian. Only the fields this package relies on
# are parsed; everything else is preserved as zeros on write.

_HDR_SIZE = 348
_DTYPES = {2: np.uint8, 4: np.int16, 16: np.float32}
_DTYPE_CODES = {np.dtype(np.uint8): (2, 8), np.dtype(np.int16): (4, 16), np.dtype(np.float32): (16, 32)}


def _read_bytes(path: Path) -> bytes:
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except OSError as e:
            raise IoFailure(f"cannot decompress {path}: {e}") from e
    return raw


def _quaternion_to_matrix(b: float, c: float, d: float, qfac: float) -> np.ndarray:
    a2 = 1.0 - (b * b + c * c + d * d)
    a = float(np.sqrt(max(a2, 0.0)))
    m = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    m[:, 2] *= -1.0 if qfac < 0 else 1.0
    return m


def _nearest_axes(direction: np.ndarray) -> Orientation:
    """Map a 3x3 direction matrix to the closest permutation + flips.

    Column j is the world direction of file axis j; assignment is greedy
    by magnitude so near-degenerate matrices resolve deterministically.
    """
    m = np.abs(direction.copy())
    perm = [-1, -1, -1]
    flips = [False, False, False]
    for _ in range(3):
        i, j = np.unravel_index(int(np.argmax(m)), m.shape)
        perm[j] = int(i)
        flips[j] = bool(direction[i, j] < 0)
        m[i, :] = -1.0
        m[:, j] = -1.0
    return Orientation(perm=tuple(perm), flips=tuple(flips))


def load_volume(path: str | Path, kind: VolumeKind = VolumeKind.INTENSITY) -> Volume:
    """Load a NIfTI-1 volume (.nii or .nii.gz), normalized to the canonical frame.

    Intensities are returned as stored (HU for CT); scl_slope/scl_inter are
    applied when nontrivial, yielding float32.
    """
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < _HDR_SIZE:
        raise MalformedHeader(f"{path}: file shorter than the 348-byte header")

    sizeof_hdr = struct.unpack_from("<i", raw, 0)[0]
    if sizeof_hdr != _HDR_SIZE:
        if struct.unpack_from(">i", raw, 0)[0] == _HDR_SIZE:
            raise MalformedHeader(f"{path}: big-endian files are not supported")
        raise MalformedHeader(f"{path}: sizeof_hdr is {sizeof_hdr}, expected 348")

    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise MalformedHeader(f"{path}: bad magic {magic!r}")
    if magic == b"ni1\x00":
        raise MalformedHeader(f"{path}: detached .hdr/.img pairs are not supported")

    dim = struct.unpack_from("<8h", raw, 40)
    ndim = dim[0]
    if ndim == 4 and dim[4] == 1:
        ndim = 3
    if ndim != 3:
        raise MalformedHeader(f"{path}: expected a 3D volume, header says {dim[0]}D with dim={dim[1:5]}")
    nx, ny, nz = dim[1], dim[2], dim[3]
    if nx < 1 or ny < 1 or nz < 1:
        raise MalformedHeader(f"{path}: non-positive dimension in {dim[1:4]}")

    datatype = struct.unpack_from("<h", raw, 70)[0]
    if datatype not in _DTYPES:
        raise UnsupportedDatatype(f"{path}: datatype code {datatype} (supported: uint8=2, int16=4, float32=16)")
    dtype = np.dtype(_DTYPES[datatype]).newbyteorder("<")

    pixdim = struct.unpack_from("<8f", raw, 76)
    vox_offset = int(struct.unpack_from("<f", raw, 108)[0])
    scl_slope, scl_inter = struct.unpack_from("<2f", raw, 112)
    qform_code, sform_code = struct.unpack_from("<2h", raw, 252)

    nvox = nx * ny * nz
    need = vox_offset + nvox * dtype.itemsize
    if vox_offset < _HDR_SIZE or len(raw) < need:
        raise MalformedHeader(f"{path}: voxel data truncated ({len(raw)} bytes, need {need})")
    flat = np.frombuffer(raw, dtype=dtype, count=nvox, offset=vox_offset)
    # On-disk order is x-fastest: reshape (z, y, x) C-order, then to (x, y, z).
    data = flat.reshape((nz, ny, nx)).transpose(2, 1, 0)

    if (scl_slope not in (0.0, 1.0)) or scl_inter != 0.0:
        slope = scl_slope if scl_slope != 0.0 else 1.0
        data = (data.astype(np.float32) * np.float32(slope)) + np.float32(scl_inter)
    else:
        data = np.ascontiguousarray(data)

    spacing = (abs(pixdim[1]) or 1.0, abs(pixdim[2]) or 1.0, abs(pixdim[3]) or 1.0)
    if sform_code > 0:
        sx = struct.unpack_from("<4f", raw, 280)
        sy = struct.unpack_from("<4f", raw, 296)
        sz = struct.unpack_from("<4f", raw, 312)
        direction = np.array([sx[:3], sy[:3], sz[:3]])
        norms = np.linalg.norm(direction, axis=0)
        if (norms > 0).all():
            spacing = (float(norms[0]), float(norms[1]), float(norms[2]))
        orient = _nearest_axes(direction)
    elif qform_code > 0:
        b, c, d = struct.unpack_from("<3f", raw, 256)
        qfac = pixdim[0] if pixdim[0] in (-1.0, 1.0) else 1.0
        direction = _quaternion_to_matrix(b, c, d, qfac) * np.array(spacing)
        orient = _nearest_axes(direction)
    else:
        orient = Orientation()

    if not orient.is_identity():
        data = orient.apply(data)
        spacing = orient.apply_spacing(spacing)
    data = np.ascontiguousarray(data)
    if kind is VolumeKind.BINARY_MASK:
        data = (data > 0).astype(np.uint8)
    return Volume(data=data, spacing=spacing, kind=kind, orientation=orient)


def save_volume(v: Volume, path: str | Path) -> None:
    """Write a volume as single-file NIfTI-1 in the canonical frame.

    Masks are written as uint8, logits as float32; intensities keep int16
    when they fit, else float32. Gzip is chosen by the .gz suffix.
    """
    path = Path(path)
    data = v.data
    if v.kind is VolumeKind.BINARY_MASK:
        data = data.astype(np.uint8)
    elif v.kind is VolumeKind.LOGIT:
        data = data.astype(np.float32)
    else:
        if np.issubdtype(data.dtype, np.integer) and data.min() >= -32768 and data.max() <= 32767:
            data = data.astype(np.int16)
        elif data.dtype != np.float32:
            data = data.astype(np.float32)
    code, bitpix = _DTYPE_CODES[np.dtype(data.dtype)]

    hdr = bytearray(_HDR_SIZE)
    struct.pack_into("<i", hdr, 0, _HDR_SIZE)
    nx, ny, nz = data.shape
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, bitpix)
    sx, sy, sz = v.spacing
    struct.pack_into("<8f", hdr, 76, 1.0, sx, sy, sz, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    struct.pack_into("<2h", hdr, 252, 0, 1)
    struct.pack_into("<4f", hdr, 280, sx, 0.0, 0.0, 0.0)
    struct.pack_into("<4f", hdr, 296, 0.0, sy, 0.0, 0.0)
    struct.pack_into("<4f", hdr, 312, 0.0, 0.0, sz, 0.0)
    hdr[344:348] = b"n+1\x00"

    # x-fastest on disk: transpose (x,y,z) -> (z,y,x) and flatten C-order.
    payload = np.ascontiguousarray(data.transpose(2, 1, 0), dtype=data.dtype.newbyteorder("<")).tobytes()
    blob = bytes(hdr) + b"\x00\x00\x00\x00" + payload
    try:
        if path.suffix == ".gz":
            # filename="" keeps the member header free of the output name,
            # so identical volumes produce identical bytes
            with open(path, "wb") as raw:
                with gzip.GzipFile(fileobj=raw, filename="", mode="wb",
                                   compresslevel=6, mtime=0) as f:
                    f.write(blob)
        else:
            path.write_bytes(blob)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e
