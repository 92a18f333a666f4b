"""Procedural shapes built from boxes, spheres, cylinders and ellipsoids.

Shapes live in the normalized cube [-1, 1]^3 with +y pointing up. A voxel
grid of resolution R samples occupancy at cell centers ``-1 + (i + 0.5) * 2/R``;
``occupancy[i, j, k]`` refers to the cell at (x_i, y_j, z_k).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

KINDS = ("box", "sphere", "cylinder", "ellipsoid")

CORE_CATEGORIES = (
    "airplane", "bench", "cabinet", "car", "chair", "display", "lamp",
    "loudspeaker", "rifle", "sofa", "table", "telephone", "watercraft",
)


class InvalidSpecError(ValueError):
    pass


class EmptyShapeError(ValueError):
    pass


@dataclass(frozen=True)
class Primitive:
    kind: str
    center: tuple[float, float, float]
    extent: tuple[float, float, float]
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)  # xyz Euler angles, degrees

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": list(self.center),
                "extent": list(self.extent), "rotation": list(self.rotation)}

    @classmethod
    def from_dict(cls, d: dict) -> "Primitive":
        return cls(d["kind"], tuple(d["center"]), tuple(d["extent"]), tuple(d["rotation"]))


@dataclass(frozen=True)
class ShapeSpec:
    class_id: int
    primitives: tuple[Primitive, ...]
    seed: int = 0

    def to_dict(self) -> dict:
        return {"class_id": self.class_id, "seed": self.seed,
                "primitives": [p.to_dict() for p in self.primitives]}

    @classmethod
    def from_dict(cls, d: dict) -> "ShapeSpec":
        return cls(d["class_id"], tuple(Primitive.from_dict(p) for p in d["primitives"]), d["seed"])


@dataclass
class VoxelGrid:
    occupancy: np.ndarray  # (R, R, R) uint8 in {0, 1}
    spec: ShapeSpec | None = field(default=None, repr=False)

    @property
    def resolution(self) -> int:
        return self.occupancy.shape[0]


def cell_centers(resolution: int) -> np.ndarray:
    return -1.0 + (np.arange(resolution) + 0.5) * (2.0 / resolution)


def _rotation(p: Primitive) -> np.ndarray:
    return Rotation.from_euler("xyz", p.rotation, degrees=True).as_matrix()


def validate_spec(spec: ShapeSpec) -> None:
    if not spec.primitives:
        raise InvalidSpecError("shape spec has no primitives")
    for i, p in enumerate(spec.primitives):
        if p.kind not in KINDS:
            raise InvalidSpecError(f"primitive {i}: unknown kind {p.kind!r}")
        ext = np.asarray(p.extent, dtype=float)
        if ext.shape != (3,) or np.any(ext <= 0) or not np.all(np.isfinite(ext)):
            raise InvalidSpecError(f"primitive {i}: extents must be three positive numbers")
        # world-space half sizes of the bounding box
        half = np.abs(_rotation(p)) @ ext
        if np.any(np.abs(np.asarray(p.center)) - half >= 1.0):
            raise InvalidSpecError(f"primitive {i} lies entirely outside the unit cube")


def primitive_mask(p: Primitive, points: np.ndarray) -> np.ndarray:
    """Boolean inside-test for an (N, 3) array of world points."""
    q = (points - np.asarray(p.center)) @ _rotation(p)  # rows: R^T (x - c)
    e = np.asarray(p.extent)
    if p.kind == "box":
        return np.all(np.abs(q) <= e, axis=1)
    if p.kind == "sphere":
        return np.sum(q * q, axis=1) <= e[0] ** 2
    if p.kind == "ellipsoid":
        return np.sum((q / e) ** 2, axis=1) <= 1.0
    if p.kind == "cylinder":  # axis along local y
        radial = (q[:, 0] / e[0]) ** 2 + (q[:, 2] / e[2]) ** 2
        return (radial <= 1.0) & (np.abs(q[:, 1]) <= e[1])
    raise InvalidSpecError(f"unknown kind {p.kind!r}")


def generate_shape(spec: ShapeSpec, resolution: int = 32) -> VoxelGrid:
    validate_spec(spec)
    c = cell_centers(resolution)
    pts = np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1).reshape(-1, 3)
    occ = np.zeros(len(pts), dtype=bool)
    for p in spec.primitives:
        occ |= primitive_mask(p, pts)
    if not occ.any():
        raise InvalidSpecError("shape spec produces an empty grid at this resolution")
    return VoxelGrid(occ.reshape(resolution, resolution, resolution).astype(np.uint8), spec)


# --- category templates --------------------------------------------------------

def _j(rng: np.random.Generator, value, rel: float = 0.15):
    v = np.asarray(value, dtype=float)
    return tuple(float(x) for x in v * (1.0 + rng.uniform(-rel, rel, size=v.shape)))


def _s(rng, value, abs_: float = 0.04):
    v = np.asarray(value, dtype=float)
    return tuple(float(x) for x in v + rng.uniform(-abs_, abs_, size=v.shape))


def _legs(rng, kind, xz, y, half_h, r):
    return [Primitive(kind, _s(rng, (sx * xz[0], y, sz * xz[1]), 0.02), _j(rng, (r, half_h, r), 0.1))
            for sx in (-1, 1) for sz in (-1, 1)]


def _airplane(rng):
    return [Primitive("ellipsoid", _s(rng, (0, 0, 0)), _j(rng, (0.85, 0.13, 0.13))),
            Primitive("box", _s(rng, (0.05, 0, 0)), _j(rng, (0.16, 0.03, 0.8))),
            Primitive("box", _s(rng, (-0.7, 0.18, 0)), _j(rng, (0.1, 0.2, 0.03))),
            Primitive("box", _s(rng, (-0.7, 0.02, 0)), _j(rng, (0.08, 0.025, 0.3)))]


def _bench(rng):
    parts = [Primitive("box", _s(rng, (0, -0.1, 0)), _j(rng, (0.85, 0.05, 0.25)))]
    parts += _legs(rng, "box", (0.75, 0.18), -0.45, 0.32, 0.05)
    if rng.random() < 0.6:
        parts.append(Primitive("box", _s(rng, (0, 0.2, -0.22)), _j(rng, (0.85, 0.22, 0.04))))
    return parts


def _cabinet(rng):
    return [Primitive("box", _s(rng, (0, 0, 0)), _j(rng, (0.5, 0.75, 0.4))),
            Primitive("box", _s(rng, (0.3, 0.1, 0.42), 0.02), _j(rng, (0.05, 0.15, 0.05)))]


def _car(rng):
    parts = [Primitive("box", _s(rng, (0, -0.2, 0)), _j(rng, (0.85, 0.18, 0.4))),
             Primitive("box", _s(rng, (-0.05, 0.08, 0)), _j(rng, (0.45, 0.14, 0.36)))]
    for sx in (-1, 1):
        for sz in (-1, 1):
            parts.append(Primitive("cylinder", _s(rng, (0.55 * sx, -0.42, 0.38 * sz), 0.02),
                                   _j(rng, (0.17, 0.06, 0.17), 0.1), (90.0, 0.0, 0.0)))
    return parts


def _chair(rng):
    parts = [Primitive("box", _s(rng, (0, -0.05, 0)), _j(rng, (0.42, 0.05, 0.42))),
             Primitive("box", _s(rng, (0, 0.42, -0.38)), _j(rng, (0.42, 0.42, 0.05)))]
    parts += _legs(rng, "cylinder", (0.36, 0.36), -0.5, 0.42, 0.05)
    return parts


def _display(rng):
    return [Primitive("box", _s(rng, (0, 0.25, 0)), _j(rng, (0.75, 0.45, 0.04))),
            Primitive("cylinder", _s(rng, (0, -0.35, 0), 0.02), _j(rng, (0.06, 0.2, 0.06))),
            Primitive("box", _s(rng, (0, -0.58, 0), 0.02), _j(rng, (0.3, 0.03, 0.2)))]


def _lamp(rng):
    top = rng.choice(["cylinder", "ellipsoid", "sphere"])
    return [Primitive("cylinder", _s(rng, (0, -0.8, 0), 0.02), _j(rng, (0.3, 0.05, 0.3))),
            Primitive("cylinder", _s(rng, (0, -0.15, 0), 0.02), _j(rng, (0.04, 0.65, 0.04))),
            Primitive(str(top), _s(rng, (0, 0.6, 0)), _j(rng, (0.35, 0.25, 0.35)))]


def _loudspeaker(rng):
    return [Primitive("box", _s(rng, (0, 0, 0)), _j(rng, (0.35, 0.75, 0.35))),
            Primitive("cylinder", _s(rng, (0, 0.35, 0.36), 0.02), _j(rng, (0.2, 0.05, 0.2)), (90.0, 0.0, 0.0)),
            Primitive("cylinder", _s(rng, (0, -0.3, 0.36), 0.02), _j(rng, (0.25, 0.05, 0.25)), (90.0, 0.0, 0.0))]


def _rifle(rng):
    return [Primitive("box", _s(rng, (0.15, 0.05, 0)), _j(rng, (0.8, 0.05, 0.04))),
            Primitive("box", _s(rng, (-0.7, -0.03, 0)), _j(rng, (0.2, 0.12, 0.05))),
            Primitive("box", _s(rng, (-0.1, -0.2, 0)), _j(rng, (0.06, 0.18, 0.04)))]


def _sofa(rng):
    return [Primitive("box", _s(rng, (0, -0.35, 0.05)), _j(rng, (0.85, 0.2, 0.4))),
            Primitive("box", _s(rng, (0, 0.05, -0.3)), _j(rng, (0.85, 0.3, 0.12))),
            Primitive("box", _s(rng, (-0.8, -0.1, 0.05)), _j(rng, (0.1, 0.25, 0.4))),
            Primitive("box", _s(rng, (0.8, -0.1, 0.05)), _j(rng, (0.1, 0.25, 0.4)))]


def _table(rng):
    parts = [Primitive("box", _s(rng, (0, 0.3, 0)), _j(rng, (0.8, 0.05, 0.5)))]
    parts += _legs(rng, "box", (0.7, 0.42), -0.25, 0.5, 0.05)
    return parts


def _telephone(rng):
    return [Primitive("box", _s(rng, (0, 0, 0)), _j(rng, (0.3, 0.65, 0.05))),
            Primitive("ellipsoid", _s(rng, (0, 0.5, 0.07), 0.02), _j(rng, (0.12, 0.06, 0.04)))]


def _watercraft(rng):
    return [Primitive("ellipsoid", _s(rng, (0, -0.35, 0)), _j(rng, (0.9, 0.22, 0.3))),
            Primitive("box", _s(rng, (-0.15, -0.05, 0)), _j(rng, (0.3, 0.15, 0.2))),
            Primitive("cylinder", _s(rng, (0.25, 0.3, 0), 0.02), _j(rng, (0.03, 0.5, 0.03)))]


TEMPLATES = (_airplane, _bench, _cabinet, _car, _chair, _display, _lamp,
             _loudspeaker, _rifle, _sofa, _table, _telephone, _watercraft)


def _procedural_template(category: int) -> list[Primitive]:
    rng = np.random.default_rng([category, 7919])
    parts = []
    for _ in range(int(rng.integers(2, 5))):
        kind = str(rng.choice(KINDS))
        center = tuple(float(x) for x in rng.uniform(-0.45, 0.45, 3))
        extent = tuple(float(x) for x in rng.uniform(0.1, 0.5, 3))
        rot = (0.0, float(rng.choice([0.0, 30.0, 45.0])), 0.0)
        parts.append(Primitive(kind, center, extent, rot))
    return parts


def category_name(category: int) -> str:
    if category < len(CORE_CATEGORIES):
        return CORE_CATEGORIES[category]
    return f"proc{category:03d}"


def sample_spec(category: int, seed: int) -> ShapeSpec:
    """Draw one object of ``category``. Categories past the 13 named ones are
    procedural compositions that stay fixed per category id."""
    rng = np.random.default_rng([category, seed])
    if category < len(TEMPLATES):
        prims = TEMPLATES[category](rng)
    else:
        prims = [Primitive(p.kind, _s(rng, p.center), _j(rng, p.extent), p.rotation)
                 for p in _procedural_template(category)]
    return ShapeSpec(category, tuple(prims), seed)
