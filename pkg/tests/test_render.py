import numpy as np
import pytest

from recon3d.data.render import render_views, view_azimuths
from recon3d.data.shapes import EmptyShapeError, Primitive, ShapeSpec, generate_shape


def test_azimuths_equally_spaced():
    assert np.allclose(view_azimuths(6), [0, 60, 120, 180, 240, 300])
    assert np.allclose(render_views(np.ones((8, 8, 8)), k=6, size=32).azimuths, [0, 60, 120, 180, 240, 300])


def test_full_cube_every_view_nonempty():
    views = render_views(np.ones((32, 32, 32), dtype=np.uint8), k=12, size=64)
    assert views.images.shape == (12, 64, 64)
    assert all((img > 0).sum() > 0 for img in views.images)
    assert views.images.min() >= 0 and views.images.max() <= 1


def test_four_fold_symmetry():
    # box centred on the vertical axis is invariant under 90 degree turns about it
    spec = ShapeSpec(0, (Primitive("box", (0, 0, 0), (0.5, 0.25, 0.5)),
                         Primitive("cylinder", (0, 0.4, 0), (0.2, 0.3, 0.2))))
    occ = generate_shape(spec).occupancy
    views = render_views(occ, k=4, size=96)
    assert np.abs(views.images[0] - views.images[1]).max() <= 1e-6


def test_empty_grid_rejected():
    with pytest.raises(EmptyShapeError):
        render_views(np.zeros((8, 8, 8)), k=2)


def test_k_must_be_positive():
    with pytest.raises(ValueError):
        render_views(np.ones((8, 8, 8)), k=0)


def test_views_differ_for_asymmetric_shape():
    spec = ShapeSpec(0, (Primitive("box", (0.4, 0, 0), (0.3, 0.2, 0.1)),))
    views = render_views(generate_shape(spec), k=4, size=64)
    assert np.abs(views.images[0] - views.images[1]).max() > 0.1
