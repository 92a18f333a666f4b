"""Boundary-face meshes of voxel grids, OBJ export and surface point sampling."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..data.shapes import EmptyShapeError

# corner offsets of a face spanned by the two axes following the face normal
_QUAD = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3) float64 in [-1, 1]
    faces: np.ndarray  # (F, 3) int64, counter-clockwise seen from outside

    def to_obj(self, path=None) -> str:
        lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in self.vertices]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in self.faces]
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    def areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def read_obj(path) -> Mesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return Mesh(np.array(verts, dtype=float), np.array(faces, dtype=np.int64))


def extract_mesh(grid) -> Mesh:
    """Two triangles per occupied-cell face that borders an empty cell or the
    grid boundary; vertices shared on the lattice and mapped to [-1, 1]^3."""
    occ = np.asarray(getattr(grid, "occupancy", grid)).astype(bool)
    if not occ.any():
        raise EmptyShapeError("cannot extract a mesh from an empty grid")
    r = occ.shape[0]
    padded = np.pad(occ, 1)
    quads = []
    for axis in range(3):
        b, c = (axis + 1) % 3, (axis + 2) % 3
        for sign in (1, -1):
            neighbour = np.roll(padded, -sign, axis=axis)[1:-1, 1:-1, 1:-1]
            cells = np.argwhere(occ & ~neighbour)
            if not len(cells):
                continue
            corners = np.repeat(cells[:, None, :], 4, axis=1)
            corners[:, :, axis] += 1 if sign > 0 else 0
            corners[:, :, b] += _QUAD[:, 0]
            corners[:, :, c] += _QUAD[:, 1]
            if sign < 0:
                corners = corners[:, ::-1]
            quads.append(corners)
    quads = np.concatenate(quads)
    lattice, inverse = np.unique(quads.reshape(-1, 3), axis=0, return_inverse=True)
    q = inverse.reshape(-1, 4)
    faces = np.concatenate([q[:, [0, 1, 2]], q[:, [0, 2, 3]]])
    return Mesh(-1.0 + lattice * (2.0 / r), faces.astype(np.int64))


def sample_points(mesh: Mesh, n: int = 512, seed: int = 0) -> np.ndarray:
    """Area-weighted uniform samples on the surface."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    areas = mesh.areas()
    tri = rng.choice(len(areas), size=n, p=areas / areas.sum())
    u, v = rng.random(n), rng.random(n)
    su = np.sqrt(u)
    w0, w1, w2 = 1 - su, su * (1 - v), su * v
    p = mesh.vertices[mesh.faces[tri]]
    return w0[:, None] * p[:, 0] + w1[:, None] * p[:, 1] + w2[:, None] * p[:, 2]
