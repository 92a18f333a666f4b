"""Orthographic depth-shaded silhouette renders of voxel grids."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .shapes import EmptyShapeError, VoxelGrid, cell_centers

_EXTENT = np.sqrt(3.0)  # half-width of the image plane; contains the rotated unit cube


@dataclass
class ViewSet:
    images: np.ndarray  # (k, H, W) float32 in [0, 1]
    azimuths: np.ndarray  # degrees
    pitch: float

    def __len__(self) -> int:
        return len(self.images)


def surface_voxels(occupancy: np.ndarray) -> np.ndarray:
    """Indices (N, 3) of occupied cells with at least one empty 6-neighbour."""
    occ = np.pad(occupancy.astype(bool), 1)
    inner = occ[1:-1, 1:-1, 1:-1]
    covered = np.ones_like(inner)
    for axis in range(3):
        for shift in (1, -1):
            covered &= np.roll(occ, shift, axis=axis)[1:-1, 1:-1, 1:-1]
    return np.argwhere(inner & ~covered)


def camera_rotation(azimuth: float, pitch: float) -> np.ndarray:
    """World -> camera rotation. Camera looks along -z; pitch is the angle
    between the viewing direction and the vertical axis."""
    a = np.deg2rad(azimuth)
    e = np.deg2rad(90.0 - pitch)  # elevation above the horizon
    ry = np.array([[np.cos(a), 0.0, -np.sin(a)], [0.0, 1.0, 0.0], [np.sin(a), 0.0, np.cos(a)]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, np.cos(e), -np.sin(e)], [0.0, np.sin(e), np.cos(e)]])
    return rx @ ry


def render_view(occupancy: np.ndarray, azimuth: float, pitch: float = 60.0, size: int = 224) -> np.ndarray:
    r = occupancy.shape[0]
    idx = surface_voxels(occupancy)
    if len(idx) == 0:
        raise EmptyShapeError("cannot render an empty grid")
    centers = cell_centers(r)[idx]
    cam = centers @ camera_rotation(azimuth, pitch).T
    # snap away ~1e-16 trig noise so symmetric poses rasterize identically
    cam = np.round(cam, 9)
    pix = 2.0 * _EXTENT / size
    half = int(round(0.6 * (2.0 / r) / pix))
    col = np.floor((cam[:, 0] + _EXTENT) / pix).astype(np.int64)
    row = np.floor((_EXTENT - cam[:, 1]) / pix).astype(np.int64)
    offs = np.arange(-half, half + 1)
    rows = (row[:, None, None] + offs[None, :, None]).repeat(len(offs), axis=2).ravel()
    cols = (col[:, None, None] + offs[None, None, :]).repeat(len(offs), axis=1).ravel()
    depth = np.repeat(cam[:, 2], len(offs) ** 2)
    keep = (rows >= 0) & (rows < size) & (cols >= 0) & (cols < size)
    flat, depth = rows[keep] * size + cols[keep], depth[keep]
    # nearest surface (largest camera z) wins
    order = np.lexsort((-depth, flat))
    flat, depth = flat[order], depth[order]
    first = np.ones(len(flat), dtype=bool)
    first[1:] = flat[1:] != flat[:-1]
    image = np.zeros(size * size, dtype=np.float32)
    image[flat[first]] = 0.25 + 0.75 * (depth[first] + _EXTENT) / (2.0 * _EXTENT)
    return image.reshape(size, size)


def view_azimuths(k: int) -> np.ndarray:
    return np.arange(k) * (360.0 / k)


def render_views(grid: VoxelGrid | np.ndarray, k: int = 12, pitch: float = 60.0, size: int = 224) -> ViewSet:
    if k < 1:
        raise ValueError("k must be >= 1")
    occ = grid.occupancy if isinstance(grid, VoxelGrid) else np.asarray(grid)
    if not occ.any():
        raise EmptyShapeError("cannot render an empty grid")
    az = view_azimuths(k)
    images = np.stack([render_view(occ, a, pitch, size) for a in az])
    return ViewSet(images, az, float(pitch))
