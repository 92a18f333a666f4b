"""Binary formats for signal images and voxel grids.

``.f32``: 24-byte header (magic ``F32IMG\\0\\0``, u32 height, u32 width, u64
reserved) followed by ``height*width`` little-endian float32 values.

``voxel.bin``: 16-byte header (magic ``VOX1``, u32 R, 8 reserved bytes)
followed by the R**3 occupancy bits packed with :func:`numpy.packbits`
(C order, big bit order).
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

F32_MAGIC = b"F32IMG\x00\x00"
VOX_MAGIC = b"VOX1"


class FormatError(ValueError):
    pass


def write_f32(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {image.shape}")
    h, w = image.shape
    header = F32_MAGIC + struct.pack("<IIQ", h, w, 0)
    Path(path).write_bytes(header + np.ascontiguousarray(image, dtype="<f4").tobytes())


def read_f32(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 24 or blob[:8] != F32_MAGIC:
        raise FormatError(f"{path}: not an F32IMG file")
    h, w, _ = struct.unpack("<IIQ", blob[8:24])
    if len(blob) != 24 + 4 * h * w:
        raise FormatError(f"{path}: truncated payload")
    return np.frombuffer(blob, dtype="<f4", offset=24).reshape(h, w).astype(np.float32)


def write_voxels(path, occupancy: np.ndarray) -> None:
    occ = np.asarray(occupancy)
    r = occ.shape[0]
    if occ.shape != (r, r, r):
        raise ValueError(f"expected a cubic grid, got shape {occ.shape}")
    header = VOX_MAGIC + struct.pack("<I", r) + bytes(8)
    Path(path).write_bytes(header + np.packbits(occ.astype(bool).ravel()).tobytes())


def read_voxels(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != VOX_MAGIC:
        raise FormatError(f"{path}: not a VOX1 file")
    (r,) = struct.unpack("<I", blob[4:8])
    bits = np.unpackbits(np.frombuffer(blob, dtype=np.uint8, offset=16), count=r ** 3)
    return bits.reshape(r, r, r).astype(np.uint8)
