import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recon3d.data.shapes import (CORE_CATEGORIES, EmptyShapeError, InvalidSpecError, Primitive, ShapeSpec,
                                 category_name, generate_shape, sample_spec)


def lattice_ball_count(radius, r):
    # independent triple loop over cell centres
    n = 0
    for i in range(r):
        x = -1 + (i + 0.5) * 2 / r
        for j in range(r):
            y = -1 + (j + 0.5) * 2 / r
            for k in range(r):
                z = -1 + (k + 0.5) * 2 / r
                if x * x + y * y + z * z <= radius * radius:
                    n += 1
    return n


def test_sphere_matches_lattice_count():
    spec = ShapeSpec(0, (Primitive("sphere", (0.0, 0.0, 0.0), (0.5, 0.5, 0.5)),))
    grid = generate_shape(spec, 32)
    assert int(grid.occupancy.sum()) == lattice_ball_count(0.5, 32)


def test_deterministic():
    spec = sample_spec(4, 123)
    a = generate_shape(spec).occupancy
    b = generate_shape(sample_spec(4, 123)).occupancy
    assert a.tobytes() == b.tobytes()
    assert set(np.unique(a)) <= {0, 1}


def test_empty_spec_rejected():
    with pytest.raises(InvalidSpecError):
        generate_shape(ShapeSpec(0, ()))


def test_primitive_outside_cube_rejected():
    spec = ShapeSpec(0, (Primitive("box", (3.0, 0.0, 0.0), (0.2, 0.2, 0.2)),))
    with pytest.raises(InvalidSpecError):
        generate_shape(spec)


def test_unknown_kind_rejected():
    with pytest.raises(InvalidSpecError):
        generate_shape(ShapeSpec(0, (Primitive("torus", (0, 0, 0), (0.3, 0.3, 0.3)),)))


def test_empty_shape_error_is_distinct_type():
    assert not issubclass(InvalidSpecError, EmptyShapeError)


def test_box_cell_count():
    # half-width 0.5 covers cell centres with |c| <= 0.5: 16 cells per axis at R=32
    spec = ShapeSpec(0, (Primitive("box", (0, 0, 0), (0.5, 0.5, 0.5)),))
    assert generate_shape(spec).occupancy.sum() == 16 ** 3


def test_spec_roundtrip():
    spec = sample_spec(7, 99)
    assert ShapeSpec.from_dict(spec.to_dict()) == spec


def test_category_names():
    assert category_name(0) == CORE_CATEGORIES[0]
    assert len(CORE_CATEGORIES) == 13
    assert category_name(13) not in CORE_CATEGORIES


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 16), st.integers(0, 2 ** 40))
def test_sampled_specs_valid_and_nonempty(category, seed):
    grid = generate_shape(sample_spec(category, seed))
    assert grid.occupancy.any()
    assert grid.occupancy.shape == (32, 32, 32)
