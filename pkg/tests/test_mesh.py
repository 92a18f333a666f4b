import numpy as np
import pytest

from recon3d.data.shapes import EmptyShapeError
from recon3d.lad import extract_mesh, read_obj, sample_points


def _grid(r, cells):
    g = np.zeros((r, r, r), dtype=bool)
    for c in cells:
        g[c] = True
    return g


def test_single_voxel_cube():
    m = extract_mesh(_grid(4, [(1, 1, 1)]))
    assert len(m.faces) == 12 and len(m.vertices) == 8
    assert m.areas().sum() == pytest.approx(6 * 0.5 ** 2)


def test_two_voxels_share_a_face():
    assert len(extract_mesh(_grid(4, [(1, 1, 1), (2, 1, 1)])).faces) == 20


def test_full_grid_and_bounds():
    r = 5
    m = extract_mesh(np.ones((r, r, r), dtype=bool))
    assert len(m.faces) == 12 * r * r
    assert m.vertices.min() == -1.0 and m.vertices.max() == 1.0


def test_no_degenerate_and_outward_orientation(rng):
    occ = rng.random((8, 8, 8)) > 0.6
    m = extract_mesh(occ)
    assert (m.areas() > 0).all()
    assert np.abs(m.vertices).max() <= 1.0
    # closed orientable surface: signed volume equals occupied volume
    v = m.vertices[m.faces]
    vol = np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6
    assert vol == pytest.approx(occ.sum() * (2 / 8) ** 3)


def test_empty_grid_errors():
    with pytest.raises(EmptyShapeError):
        extract_mesh(np.zeros((4, 4, 4), dtype=bool))


def test_obj_roundtrip(tmp_path):
    m = extract_mesh(_grid(4, [(0, 1, 2), (3, 3, 3)]))
    m.to_obj(tmp_path / "m.obj")
    back = read_obj(tmp_path / "m.obj")
    assert np.array_equal(back.faces, m.faces)
    assert np.allclose(back.vertices, m.vertices, atol=1e-6)


def test_sample_points_on_surface():
    m = extract_mesh(_grid(2, [(0, 0, 0)]))
    p = sample_points(m, 200, seed=1)
    assert p.shape == (200, 3)
    # surface of the cube [-1, 0]^3: one coordinate sits on a face plane
    on_face = (np.isclose(p, -1) | np.isclose(p, 0)).any(1)
    assert on_face.all() and (p >= -1 - 1e-12).all() and (p <= 1e-12).all()
    assert np.array_equal(p, sample_points(m, 200, seed=1))
    with pytest.raises(ValueError):
        sample_points(m, 0)
