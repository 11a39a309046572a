"""Minimal single-file NIfTI-1 reader/writer.

Covers exactly what the pipeline needs: 3D volumes, float32/int16/uint8
payloads, voxel spacing via pixdim and axis orientation via the sform.
Written files are uncompressed ``.nii`` with a deterministic byte layout;
the reader additionally accepts ``.nii.gz``.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path
from typing import Tuple

import numpy as np

from .errors import InvalidVolumeError

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

_DTYPES = {2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32, 64: np.float64}
_CODES = {np.dtype(np.uint8): 2, np.dtype(np.int16): 4, np.dtype(np.int32): 8,
          np.dtype(np.float32): 16, np.dtype(np.float64): 64}

# World direction of the positive voxel axis for each orientation letter.
_AXIS_VECTORS = {
    "R": (0, +1.0), "L": (0, -1.0),
    "A": (1, +1.0), "P": (1, -1.0),
    "S": (2, +1.0), "I": (2, -1.0),
}
_LETTERS = {(0, +1.0): "R", (0, -1.0): "L", (1, +1.0): "A", (1, -1.0): "P",
            (2, +1.0): "S", (2, -1.0): "I"}


def orientation_affine(orientation: str, spacing: Tuple[float, float, float]) -> np.ndarray:
    """3x3 direction matrix: column j = world direction of voxel axis j."""
    if len(orientation) != 3:
        raise InvalidVolumeError(f"orientation must be a 3-letter code, got {orientation!r}")
    mat = np.zeros((3, 3), dtype=np.float64)
    seen_axes = set()
    for j, letter in enumerate(orientation.upper()):
        if letter not in _AXIS_VECTORS:
            raise InvalidVolumeError(f"bad orientation letter {letter!r} in {orientation!r}")
        axis, sign = _AXIS_VECTORS[letter]
        if axis in seen_axes:
            raise InvalidVolumeError(f"orientation {orientation!r} repeats a world axis")
        seen_axes.add(axis)
        mat[axis, j] = sign * spacing[j]
    return mat


def affine_orientation(mat: np.ndarray) -> str:
    """Axis-code string of a direction matrix (dominant axis per column)."""
    letters = []
    for j in range(3):
        col = mat[:, j]
        axis = int(np.argmax(np.abs(col)))
        sign = 1.0 if col[axis] >= 0 else -1.0
        letters.append(_LETTERS[(axis, sign)])
    if len(set(letters)) != 3:
        raise InvalidVolumeError("affine does not define a proper orientation")
    return "".join(letters)


def write_nifti(path, values: np.ndarray, spacing: Tuple[float, float, float],
                orientation: str = "RAS"):
    values = np.asarray(values)
    if values.ndim != 3:
        raise InvalidVolumeError(f"can only write 3D volumes, got shape {values.shape}")
    if values.dtype not in _CODES:
        values = values.astype(np.float32)
    code = _CODES[values.dtype]
    bitpix = values.dtype.itemsize * 8

    header = bytearray(HEADER_SIZE)
    struct.pack_into("<i", header, 0, HEADER_SIZE)
    dim = (3,) + values.shape + (1, 1, 1, 1)
    struct.pack_into("<8h", header, 40, *dim)
    struct.pack_into("<h", header, 70, code)
    struct.pack_into("<h", header, 72, bitpix)
    pixdim = (1.0,) + tuple(float(s) for s in spacing) + (0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<8f", header, 76, *pixdim)
    struct.pack_into("<f", header, 108, float(VOX_OFFSET))
    struct.pack_into("<f", header, 112, 1.0)  # scl_slope
    struct.pack_into("<f", header, 116, 0.0)  # scl_inter
    struct.pack_into("<h", header, 252, 0)    # qform_code
    struct.pack_into("<h", header, 254, 1)    # sform_code
    mat = orientation_affine(orientation, spacing)
    struct.pack_into("<4f", header, 280, *mat[0, :], 0.0)
    struct.pack_into("<4f", header, 296, *mat[1, :], 0.0)
    struct.pack_into("<4f", header, 312, *mat[2, :], 0.0)
    header[344:348] = MAGIC

    with open(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(b"\x00" * (VOX_OFFSET - HEADER_SIZE))
        fh.write(values.tobytes(order="F"))


def read_nifti(path) -> Tuple[np.ndarray, Tuple[float, float, float], str]:
    """Returns (values[x, y, z], spacing_mm, orientation)."""
    path = Path(path)
    opener = gzip.open if path.name.endswith(".gz") else open
    with opener(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < HEADER_SIZE:
        raise InvalidVolumeError(f"{path}: truncated NIfTI header")
    (sizeof_hdr,) = struct.unpack_from("<i", blob, 0)
    if sizeof_hdr != HEADER_SIZE:
        raise InvalidVolumeError(f"{path}: not a little-endian NIfTI-1 file")
    dim = struct.unpack_from("<8h", blob, 40)
    ndim = dim[0]
    if ndim < 3 or any(d > 1 for d in dim[4:4 + max(0, ndim - 3)]):
        raise InvalidVolumeError(f"{path}: only 3D volumes are supported, dim={dim}")
    shape = tuple(int(d) for d in dim[1:4])
    (datatype,) = struct.unpack_from("<h", blob, 70)
    if datatype not in _DTYPES:
        raise InvalidVolumeError(f"{path}: unsupported NIfTI datatype {datatype}")
    pixdim = struct.unpack_from("<8f", blob, 76)
    spacing = tuple(float(abs(p)) if p != 0 else 1.0 for p in pixdim[1:4])
    (vox_offset,) = struct.unpack_from("<f", blob, 108)
    slope, inter = struct.unpack_from("<2f", blob, 112)
    (sform_code,) = struct.unpack_from("<h", blob, 254)
    if sform_code > 0:
        rows = [struct.unpack_from("<4f", blob, off)[:3] for off in (280, 296, 312)]
        orientation = affine_orientation(np.asarray(rows, dtype=np.float64))
    else:
        orientation = "RAS"

    count = int(np.prod(shape))
    dtype = _DTYPES[datatype]
    start = int(vox_offset)
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=start)
    values = data.reshape(shape, order="F").astype(np.float32)
    if slope not in (0.0, 1.0) or inter != 0.0:
        effective_slope = slope if slope != 0.0 else 1.0
        values = values * effective_slope + inter
    return values, spacing, orientation
