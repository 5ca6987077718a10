import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from fri_lab.rng import Stream, as_stream, derive


@given(st.integers(0, 2**63), st.lists(st.integers(0, 2**20), max_size=4))
def test_derive_is_pure(seed, path):
    assert derive(seed, *path) == derive(seed, *path)


def test_paths_give_distinct_keys():
    keys = {derive(7, i, j) for i in range(50) for j in range(50)}
    assert len(keys) == 2500
    assert derive(7, 1, 2) != derive(7, 2, 1)


def test_stream_is_replayable_and_children_independent_of_parent_use():
    a, b = Stream(3), Stream(3)
    xs = [a.next_u64() for _ in range(10)]
    assert xs == [b.next_u64() for _ in range(10)]
    assert a.child(5).key == Stream(3).child(5).key


def test_as_stream_accepts_int_and_stream():
    s = Stream(1)
    assert as_stream(s) is s
    assert as_stream(1).key == s.key


def test_uniform_and_integer_distribution():
    s = Stream(11)
    u = np.array([s.uniform() for _ in range(20000)])
    assert 0 <= u.min() and u.max() < 1
    assert sps.kstest(u, "uniform").pvalue > 1e-3
    k = np.array([s.integer(6) for _ in range(12000)])
    obs = np.bincount(k, minlength=6)
    assert sps.chisquare(obs).pvalue > 1e-3
