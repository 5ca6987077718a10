import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fri_lab import potential
from fri_lab.cluster import build_bonds
from fri_lab.lattice import Box
from fri_lab.sampler import (FriParams, FriSample, decode_sample, encode_sample, margin_bound,
                             reach_probability, recommended_margin, sample_bonds,
                             sample_hit_trajectories, sample_lucky_count, lucky_path_count,
                             sample_window, thin, thin_bonds, SampleTooLarge)
from fri_lab.stats import geometric_gof, histogram, poisson_gof

P = FriParams(1.0, 20.0, 3)
W = Box.origin(3, 3)


def test_params():
    assert P.site_rate == pytest.approx(6 / 21)
    assert P.kill.survival == pytest.approx(20 / 21)
    assert P.scaled(0.5).u == 0.5
    for bad in [(0, 1, 3), (1, 0, 3), (1, 1, 2)]:
        with pytest.raises(ValueError):
            FriParams(*bad)


def test_sample_is_deterministic_and_seed_sensitive():
    a = sample_window(P, W, 4, 1)
    b = sample_window(P, W, 4, 1)
    c = sample_window(P, W, 4, 2)
    assert np.array_equal(a.starts, b.starts) and np.array_equal(a.dirs, b.dirs)
    assert not (len(a) == len(c) and np.array_equal(a.lengths, c.lengths))


def test_bigger_margin_only_adds_trajectories():
    small = sample_window(P, W, 2, 5)
    big = sample_window(P, W, 6, 5)
    inside = np.all(np.abs(big.starts) <= 5, axis=1)
    assert np.array_equal(big.starts[inside], small.starts)
    assert np.array_equal(big.lengths[inside], small.lengths)
    # same site-keyed walks regardless of the box they were drawn in
    shifted = sample_window(P, Box((1, 0, 0), 3), 2, 5)
    common = np.all(np.abs(shifted.starts) <= 5, axis=1) & np.all(np.abs(shifted.starts - (1, 0, 0)) <= 5, axis=1)
    mine = np.all(np.abs(small.starts - (1, 0, 0)) <= 5, axis=1)
    assert np.array_equal(shifted.starts[common], small.starts[mine])


def test_bonds_match_stored_sample():
    s = sample_window(P, W, 5, 9)
    assert sample_bonds(P, W, 5, 9) == build_bonds(s)


def test_intersecting_view():
    s = sample_window(P, W, 5, 9)
    sel = s.intersecting(W)
    for i in range(len(s)):
        pos = s.trajectory(i).positions()
        assert sel[i] == bool(np.any(np.all(np.abs(pos) <= 3, axis=1)))


def test_monotone_coupling_in_u():
    lo = sample_bonds(FriParams(0.5, 20, 3), W, 4, 3, u_ref=2.0)
    hi = sample_bonds(FriParams(1.5, 20, 3), W, 4, 3, u_ref=2.0)
    assert np.all((lo.bits & hi.bits) == lo.bits)
    assert hi.n_bonds > lo.n_bonds
    with pytest.raises(ValueError):
        sample_bonds(FriParams(3.0, 20, 3), W, 4, 3, u_ref=2.0)


def test_thinning_union_is_or_of_parts():
    parts = thin(P, [0.25, 0.75], W, 3, 8)
    assert [p.params.u for p in parts] == [0.25, 0.75]
    union = build_bonds(parts[0]).bits | build_bonds(parts[1]).bits
    assert np.array_equal(thin_bonds(P, [0.25, 0.75], W, 3, 8).bits, union)
    assert thin_bonds(P, [1.0], W, 3, 8) == sample_bonds(P, W, 3, 8)
    for bad in ([0.5, 0.6], [1.0, 0.0], []):
        with pytest.raises(ValueError):
            thin(P, bad, W, 3, 8)


def test_step_cap_guard():
    with pytest.raises(SampleTooLarge):
        sample_window(P, W, 30, 0, step_cap=1e4)
    # 67^3 padded sites, about 1.8e6 expected positions
    with pytest.raises(SampleTooLarge):
        sample_window(P, W, 30, 0, step_cap=1e6)
    sample_bonds(P, W, 30, 0, step_cap=1e6)
    with pytest.raises(SampleTooLarge, match="padded sites"):
        sample_bonds(P, W, 30, 0, step_cap=1e5)
    with pytest.raises(ValueError):
        sample_window(P, W, -1, 0)


def test_laws_of_counts_and_lengths():
    s = sample_window(FriParams(1.0, 10.0, 3), Box.origin(3, 12), 0, 4)
    assert poisson_gof(histogram(s.site_counts()), 6 / 11).passed
    assert geometric_gof(s.lengths, 10.0).passed


def test_hit_trajectories_agree_with_stored_sample():
    A = [tuple(x) for x in Box.origin(3, 1).sites()]
    s = sample_window(P, Box.origin(3, 1), 6, 21)
    fh = s.first_hits(A)
    starts, first, lengths = sample_hit_trajectories(P, A, s.padded, 21)
    assert np.array_equal(starts, s.starts[fh >= 0])
    assert np.array_equal(first, fh[fh >= 0])
    assert np.array_equal(lengths, s.lengths[fh >= 0])


def test_lucky_count_matches_stored_sample():
    p = FriParams(1.0, 4.0, 3)
    A = [tuple(x) for x in Box.origin(3, 1).sites()]
    x = (0, 0, 0)
    for seed in range(5):
        s = sample_window(p, Box.origin(3, 16), 0, seed)
        assert lucky_path_count(s, x, A) == sample_lucky_count(p, x, A, seed)
    with pytest.raises(ValueError):
        sample_lucky_count(p, x, [(0, 0, 4)], 0)
    with pytest.raises(ValueError):
        lucky_path_count(sample_window(p, Box.origin(3, 4), 0, 0), x, A)


@settings(max_examples=10)
@given(st.integers(0, 2**40), st.integers(0, 3))
def test_encode_roundtrip(seed, margin):
    s = sample_window(FriParams(0.7, 5.0, 3), Box((1, -1, 0), 1), margin, seed)
    t = decode_sample(encode_sample(s))
    assert (t.params, t.window, t.margin, t.seed, t.key) == (s.params, s.window, s.margin, s.seed, s.key)
    assert np.array_equal(t.starts, s.starts) and np.array_equal(t.lengths, s.lengths)
    assert np.array_equal(t.dirs, s.dirs)


def test_save_load_and_corrupt_input(tmp_path):
    s = sample_window(P, Box.origin(3, 1), 2, 3)
    s.save(tmp_path / "s.fri")
    t = FriSample.load(tmp_path / "s.fri")
    assert np.array_equal(t.dirs, s.dirs)
    buf = encode_sample(s)
    with pytest.raises(ValueError):
        decode_sample(b"XXXX" + buf[4:])
    with pytest.raises(ValueError):
        decode_sample(buf + b"\0")


def test_reach_bounds_are_ordered_and_valid():
    k = np.arange(1, 60)
    bal = reach_probability(k, 20, 3, "ballistic")
    dif = reach_probability(k, 20, 3, "diffusive")
    assert np.all(dif <= bal + 1e-15)
    # empirical reach frequencies stay below the bound
    s = sample_window(FriParams(1.0, 20.0, 3), Box.origin(3, 8), 0, 1)
    reach = np.array([np.abs(s.trajectory(i).positions() - s.starts[i]).max() for i in range(len(s))])
    for kk in (3, 6, 10, 15):
        n = len(reach)
        freq = np.mean(reach >= kk)
        assert freq <= dif[kk - 1] + 4 * math.sqrt(dif[kk - 1] / n) + 1e-12
    with pytest.raises(ValueError):
        reach_probability(k, 20, 3, "other")


def _all_positions(smp):
    """Every position of every trajectory and the index of its owner."""
    n = len(smp)
    counts = smp.lengths + 1
    owner = np.repeat(np.arange(n), counts)
    step = np.zeros((int(counts.sum()), 3), dtype=np.int64)
    first = np.concatenate([[0], np.cumsum(counts)[:-1]])
    step[first] = smp.starts
    moves = np.ones(len(step), dtype=bool)
    moves[first] = False
    axis = smp.dirs >> 1
    step[np.nonzero(moves)[0], axis] = 2 * (smp.dirs & 1).astype(np.int64) - 1
    pos = np.cumsum(step, axis=0)
    base = np.concatenate([[np.zeros(3, dtype=np.int64)], pos[first[1:] - 1]]) if n else pos[:0]
    return pos - base[owner], owner


def test_all_positions_helper():
    smp = sample_window(P, Box.origin(3, 1), 2, 1)
    pos, owner = _all_positions(smp)
    ref = np.concatenate([smp.trajectory(i).positions() for i in range(len(smp))])
    assert np.array_equal(pos, ref)


def test_green_margin_bound_matches_visit_counts():
    # expected visits to B(w) by walks started in B(w+M) minus B(w+r)
    w, r, M, T = 2, 3, 9, 20.0
    p = FriParams(1.0, T, 3)
    s_ = T / (T + 1)
    exact = p.site_rate * (potential.outside_visit_mass(w, r, s_, 3) - potential.outside_visit_mass(w, M, s_, 3))
    assert margin_bound(r, T, u=1.0, d=3, window_radius=w) == pytest.approx(
        p.site_rate * potential.outside_visit_mass(w, r, s_, 3))
    visits = []
    for seed in range(300):
        smp = sample_window(p, Box.origin(3, w), M, seed)
        pos, owner = _all_positions(smp)
        far = np.abs(smp.starts).max(axis=1) > w + r
        visits.append(int(np.sum(far[owner] & (np.abs(pos).max(axis=1) <= w))))
    m, se = np.mean(visits), np.std(visits, ddof=1) / math.sqrt(len(visits))
    assert abs(m - exact) < 4 * se


def test_margin_rules():
    g = [margin_bound(r, 100, u=1, d=3, window_radius=8) for r in (5, 10, 20, 40)]
    assert all(a > b for a, b in zip(g, g[1:]))
    m3 = recommended_margin(100, 1e-3, window_radius=8)
    m6 = recommended_margin(100, 1e-6, window_radius=8)
    assert m6 > m3 > 0
    assert margin_bound(m3, 100, u=1, d=3, window_radius=8) <= 1e-3
    assert margin_bound(m3 - 1, 100, u=1, d=3, window_radius=8) > 1e-3
    assert recommended_margin(100, 1e-3, window_radius=8, bound="diffusive") >= m3
    assert recommended_margin(100, 1e-3, window_radius=8, bound="ballistic") > 1000
    with pytest.raises(ValueError):
        recommended_margin(100, 0)
