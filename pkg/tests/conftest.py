"""Shared test helpers.

write_reference_nifti is an independent NIfTI-1 writer used as an oracle
for the reader: it packs the header field by field and serializes voxels
with an explicit x-fastest triple loop, sharing no code with the package.
"""

import gzip
import struct
from pathlib import Path

import numpy as np

_CODES = {np.dtype(np.uint8): (2, 8), np.dtype(np.int16): (4, 16), np.dtype(np.float32): (16, 32)}
_PACK = {np.dtype(np.uint8): "<B", np.dtype(np.int16): "<h", np.dtype(np.float32): "<f"}


def write_reference_nifti(
    path,
    data: np.ndarray,
    spacing=(1.0, 1.0, 1.0),
    *,
    scl_slope: float = 0.0,
    scl_inter: float = 0.0,
    sform=None,
    qform=None,
    magic: bytes = b"n+1\x00",
    sizeof_hdr: int = 348,
    datatype_override: int | None = None,
    ndim: int = 3,
    dim4: int = 1,
    compress: bool = False,
    truncate_payload: int = 0,
) -> Path:
    """Write a NIfTI-1 file from (x, y, z)-indexed data, field by field.

    sform is an optional 3x4 row list for srow_x/y/z (sets sform_code 1);
    qform an optional (b, c, d, qfac) tuple (sets qform_code 1).
    """
    data = np.asarray(data)
    nx, ny, nz = data.shape
    dt = np.dtype(data.dtype)
    code, bitpix = _CODES[dt]
    if datatype_override is not None:
        code = datatype_override

    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, sizeof_hdr)
    struct.pack_into("<8h", hdr, 40, ndim, nx, ny, nz, dim4, 1, 1, 1)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, bitpix)
    qfac = 1.0
    if qform is not None:
        qfac = float(qform[3])
    struct.pack_into("<8f", hdr, 76, qfac, spacing[0], spacing[1], spacing[2], 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, scl_slope, scl_inter)
    qcode = 1 if qform is not None else 0
    scode = 1 if sform is not None else 0
    struct.pack_into("<2h", hdr, 252, qcode, scode)
    if qform is not None:
        struct.pack_into("<3f", hdr, 256, qform[0], qform[1], qform[2])
    if sform is not None:
        struct.pack_into("<4f", hdr, 280, *sform[0])
        struct.pack_into("<4f", hdr, 296, *sform[1])
        struct.pack_into("<4f", hdr, 312, *sform[2])
    hdr[344:348] = magic

    fmt = _PACK[dt]
    body = bytearray()
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                body += struct.pack(fmt, data[x, y, z])
    blob = bytes(hdr) + b"\x00\x00\x00\x00" + bytes(body)
    if truncate_payload:
        blob = blob[:-truncate_payload]
    path = Path(path)
    if compress:
        path.write_bytes(gzip.compress(blob))
    else:
        path.write_bytes(blob)
    return path
