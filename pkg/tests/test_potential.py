import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fri_lab import potential as pot
from fri_lab.lattice import Box

G0_3D = 1.516386059151978  # Watson
S100 = 100 / 101


def fourier_green(x, d, s, M):
    """Periodic trapezoid rule for (2pi)^-d int cos(theta.x) / (1 - s phi(theta)).

    The integrand is analytic for s < 1, so the rule converges
    exponentially in ``M``; it shares nothing with the Bessel route.
    """
    th = 2 * np.pi * np.arange(M) / M
    c = np.cos(th)
    total = 0.0
    # loop over the first axis to bound memory
    rest = np.meshgrid(*([th] * (d - 1)), indexing="ij")
    crest = sum(np.cos(t) for t in rest)
    phase_rest = sum(t * xi for t, xi in zip(rest, x[1:]))
    for i in range(M):
        phi = (c[i] + crest) / d
        total += float(np.sum(np.cos(th[i] * x[0] + phase_rest) / (1 - s * phi)))
    return total / M**d


def mc_green_origin(n_walk, steps, seed):
    """Mean visits to the origin of 3-d walks within ``steps``, plus the
    local-CLT tail sum over later even times."""
    gen = np.random.default_rng(seed)
    pos = np.zeros((n_walk, 3), dtype=np.int32)
    visits = np.ones(n_walk)
    rows = np.arange(n_walk)
    for _ in range(steps):
        k = gen.integers(0, 6, size=n_walk)
        pos[rows, k >> 1] += 2 * (k & 1) - 1
        visits += ~pos.any(axis=1)
    tail = 2 * (3 / (2 * np.pi)) ** 1.5 / math.sqrt(steps)
    return visits.mean() + tail, visits.std(ddof=1) / math.sqrt(n_walk)


def test_watson_constant():
    assert pot.green((0, 0, 0)) == pytest.approx(G0_3D, abs=1e-9)
    assert pot.green((1, 0, 0)) == pytest.approx(G0_3D - 1, abs=1e-9)


def test_green_origin_against_visit_counts():
    m, se = mc_green_origin(20000, 4000, 1)
    assert abs(m - pot.green((0, 0, 0))) < 4 * se


@pytest.mark.parametrize("d,s,M", [(3, 0.5, 40), (3, 0.9, 80), (3, S100, 160), (4, 0.9, 64)])
def test_killed_green_against_fourier(d, s, M):
    rng = np.random.default_rng(d)
    offsets = [(0,) * d, (1,) + (0,) * (d - 1)] + [tuple(rng.integers(-3, 4, size=d)) for _ in range(3)]
    for x in offsets:
        assert pot.green(x, d, s) == pytest.approx(fourier_green(np.array(x), d, s, M), abs=1e-9)


def test_killed_green_total_mass():
    # sum_x G_s(x) = 1/(1-s)
    s = 0.8
    pts = Box.origin(3, 25).sites()
    assert pot.green_many(pts, 3, s).sum() == pytest.approx(1 / (1 - s), rel=1e-8)


@settings(max_examples=30)
@given(st.tuples(*[st.integers(-12, 12)] * 3), st.sampled_from([1.0, S100, 0.5]))
def test_harmonic_identity(x, s):
    x = np.array(x)
    nbrs = np.array([x + e for e in np.vstack([np.eye(3, dtype=int), -np.eye(3, dtype=int)])])
    lhs = pot.green(tuple(x), 3, s) - s * pot.green_many(nbrs, 3, s).mean()
    assert lhs == pytest.approx(1.0 if not x.any() else 0.0, abs=1e-9)


def test_symmetry_and_cache():
    a = pot.green((3, -1, 2))
    pot.clear_cache()
    assert pot.green((-2, 1, 3)) == a
    assert pot.canonical((3, -1, 2)) == (1, 2, 3)


def test_argument_checks():
    with pytest.raises(ValueError):
        pot.green((0, 0, 0), 3, 1.5)
    with pytest.raises(ValueError):
        pot.green((0, 0), 2, 1.0)
    with pytest.raises(ValueError):
        pot.green_many([(0, 0)], 3)


def test_green_table_roundtrip():
    t = pot.GreenTable.compute([(0, 0, 0), (1, 0, 0), (2, -1, 0)], 3, S100)
    text = t.to_text()
    assert text.splitlines()[0] == f"# d=3 s={S100!r} tol=1e-10"
    u = pot.GreenTable.from_text(text)
    assert u == t and u[(0, -1, 2)] == t[(1, 2, 0)]
    with pytest.raises(ValueError):
        pot.GreenTable.from_text(text + "1 2\n")


def test_point_capacity():
    eq = pot.equilibrium_solve([(0, 0, 0)])
    assert eq.capacity * pot.green((0, 0, 0)) == pytest.approx(1, abs=1e-12)
    assert eq.as_dict() == {(0, 0, 0): pytest.approx(1 / G0_3D)}


def test_equilibrium_potential():
    K = [tuple(p) for p in Box.origin(3, 1).sites()] + [(4, 0, 0)]
    eq = pot.equilibrium_solve(K)
    sites = np.array(eq.sites)
    assert np.all(eq.weights > 0)
    for x, expect_one in [((0, 0, 0), True), ((4, 0, 0), True), ((2, 0, 0), False), ((6, 3, 1), False)]:
        phi = float(pot.green_many(sites - np.array(x), 3) @ eq.weights)
        assert (phi == pytest.approx(1.0, abs=1e-8)) if expect_one else (0 < phi < 1)


@settings(max_examples=15)
@given(st.lists(st.tuples(*[st.integers(-3, 3)] * 3), min_size=1, max_size=8, unique=True),
       st.lists(st.tuples(*[st.integers(-3, 3)] * 3), min_size=1, max_size=8, unique=True))
def test_capacity_monotone_subadditive_and_killing(A, B):
    cA, cB, cAB = pot.capacity(A), pot.capacity(B), pot.capacity(A + B)
    assert cAB >= max(cA, cB) - 1e-9
    assert cAB <= cA + cB + 1e-9
    assert pot.capacity(A, s=S100) >= cA - 1e-12


def test_size_and_condition_guards():
    with pytest.raises(ValueError):
        pot.equilibrium_solve([])
    with pytest.raises(ValueError):
        pot.equilibrium_solve([(i, 0, 0) for i in range(10)], max_size=5)
    with pytest.raises(pot.IllConditioned) as e:
        pot.equilibrium_solve([(i, 0, 0) for i in range(10)], max_condition=1.0)
    assert e.value.condition > 1


@pytest.mark.parametrize("R,d,s", [(2, 3, 1.0), (1, 3, S100), (1, 4, 1.0)])
def test_ball_capacity_orbit_reduction(R, d, s):
    full = pot.capacity([tuple(p) for p in Box.origin(d, R).sites()], d, s)
    assert pot.ball_capacity(R, d, s) == pytest.approx(full, rel=1e-10)


def test_ball_scaling_fit():
    fit = pot.ball_capacity_scaling(3, [2, 4, 6, 8])
    assert fit.exponent == pytest.approx(1.0, abs=0.15)
    assert fit.c1 <= fit.capacities[0] / 2 <= fit.c2
    with pytest.raises(ValueError):
        pot.ball_capacity_scaling(3, [2, 2, 4])
    with pytest.raises(ValueError):
        pot.ball_capacity_scaling(3, [0, 2, 4])


def test_outside_visit_mass_direct_sum():
    w, r, s = 1, 2, 0.5
    big = Box.origin(3, 18).sites()
    out = big[np.abs(big).max(axis=1) > w + r]
    win = Box.origin(3, w).sites()
    direct = sum(pot.green_many(out - y, 3, s).sum() for y in win)
    assert pot.outside_visit_mass(w, r, s, 3) == pytest.approx(direct, rel=1e-7)
    with pytest.raises(ValueError):
        pot.outside_visit_mass(1, 1, 1.0, 3)


def test_exact_hit_probability_against_walks():
    from fri_lab import _kernels as K
    A = {(0, 0, 0), (1, 0, 0)}
    y = np.array([[3, 0, 0], [0, 2, 2], [-2, 1, 0]], dtype=np.int64)
    exact = pot.hit_probability_exact(A, y, 40)
    mask = np.ones((2, 1, 1), dtype=np.uint8)
    n = 20000
    for j in range(len(y)):
        hits = K.hit_within(mask, (0, 0, 0), (2, 1, 1), np.repeat(y[j:j + 1], n, axis=0), 40, 11 + j)
        p = hits.mean()
        assert abs(p - exact[j]) < 4 * math.sqrt(exact[j] * (1 - exact[j]) / n)
    assert pot.hit_probability_exact(A, y, 0).tolist() == [0, 0, 0]


def test_hit_rate_check_methods_agree():
    A = {(0, 0, 0)}
    mc = pot.hit_rate_check(A, 16, 3, 40000, 5, annulus=(1.0, 2.0))
    ex = pot.hit_rate_check(A, 16, 3, 40000, 5, annulus=(1.0, 2.0), method="exact")
    assert mc.capacity == pytest.approx(1 / G0_3D)
    assert abs(mc.probability.value - ex.probability.value) < 4 * mc.probability.stderr
    assert ex.ratio > 0
    assert pot.hit_rate_check(set(), 16, 3, 10, 0).probability.value == 0
    with pytest.raises(ValueError):
        pot.hit_rate_check({(7, 0, 0)}, 16, 3, 10, 0)
    with pytest.raises(ValueError):
        pot.hit_rate_check(A, 16, 3, 10, 0, method="other")
