import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fri_lab.lattice import (Box, as_site, face, internal_boundary, l1_distance, linf_distance,
                             neighbors, shell_count, unit)

sites3 = st.tuples(*[st.integers(-50, 50)] * 3)


@given(sites3, sites3)
def test_metrics_symmetric(a, b):
    assert linf_distance(a, b) == linf_distance(b, a)
    assert linf_distance(a, b) <= l1_distance(a, b) <= 3 * linf_distance(a, b)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        linf_distance((0, 0), (0, 0, 0))


def test_neighbors_order_matches_direction_code():
    nb = neighbors((0, 0, 0))
    assert len(nb) == 6
    for code, s in enumerate(nb):
        assert s == unit(3, code >> 1, 1 if code & 1 else -1)


@given(st.integers(0, 4), sites3)
def test_index_roundtrip(r, c):
    b = Box(c, r)
    idx = np.arange(b.volume)
    pts = b.coords(idx)
    assert np.array_equal(b.indices(pts), idx)
    assert all(b.contains(as_site(p)) for p in pts[:: max(1, b.volume // 17)])
    assert b.index(as_site(pts[-1])) == b.volume - 1


def test_index_outside_raises():
    with pytest.raises(ValueError):
        Box.origin(3, 1).index((2, 0, 0))


def test_negative_radius():
    with pytest.raises(ValueError):
        Box.origin(3, -1)


def test_contains_box_and_padding():
    b = Box((1, 2, 3), 2)
    assert b.padded(3).contains_box(b)
    assert not b.contains_box(b.padded(1))
    assert b.padded(3).radius == 5


@pytest.mark.parametrize("d,r", [(3, 0), (3, 1), (3, 4), (4, 2), (5, 1)])
def test_internal_boundary_size(d, r):
    b = Box.origin(d, r)
    expect = (2 * r + 1) ** d - (2 * r - 1) ** d if r else 1
    assert len(internal_boundary(b)) == expect


def test_face_is_one_based():
    b = Box.origin(3, 2)
    f = face(b, 1, -1)
    assert len(f) == 25 and all(s[0] == -2 for s in f)
    with pytest.raises(ValueError):
        face(b, 0, 1)
    with pytest.raises(ValueError):
        face(b, 1, 0)


@given(st.integers(3, 5), st.integers(0, 10), st.integers(0, 10))
def test_shell_counts_tile_boxes(d, r, k):
    total = sum(shell_count(d, r, j) for j in range(k + 1))
    assert total == (2 * (r + k) + 1) ** d
