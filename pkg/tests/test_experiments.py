import dataclasses
import json

import numpy as np
import pytest

from fri_lab import experiments as E
from fri_lab.cluster import BondConfig, distance_field
from fri_lab.lattice import Box

SMALL = {
    "chemdist": dict(N=12, targets=(0, 4, 8), margin=6, u=2.0, T=20.0),
    "shape": dict(N=12, n_grid=(3, 6, 12), margin=6, u=2.0, T=20.0),
    "uniqueness": dict(N=12, R_grid=(3, 6), margin=6, u=2.0, T=20.0),
    "crossing": dict(N=12, N_grid=(3, 6, 12), margin=6, u=2.0, T=20.0),
    "qip": dict(N=16, horizons=(200, 400), walks_per_env=2, margin=6, u=2.0, T=20.0),
    "validate": dict(N=4, K_radius=1, margin=6, T=10.0, sub_replicas=3, thin_N=4, A_radii=(1, 2),
                     lucky_T=4.0),
    "t_sweep": dict(N=10, targets=(4, 8), T_grid=(10.0, 20.0), margin=5, u=2.0),
}


def small(kind, **kw):
    return E.ExperimentConfig(kind, **{"replicas": 4, "seed": 3, **SMALL[kind], **kw})


def _canon(obj):
    return json.dumps(obj, sort_keys=True, default=float)


@pytest.mark.parametrize("kind", E.KINDS)
def test_runs_are_thread_independent_and_recomputable(kind):
    cfg = small(kind)
    a = E.run(cfg, threads=1)
    b = E.run(cfg, threads=3)
    assert _canon(a.rows) == _canon(b.rows)
    assert len(a.rows) == (cfg.replicas * len(cfg.T_grid) if kind == "t_sweep" else cfg.replicas)
    rows = json.loads(json.dumps(a.rows))
    assert _canon(E.aggregate(cfg, rows)) == _canon(a.aggregates)
    assert a.checks and all({"passed", "gating"} <= set(c) for c in a.checks.values())
    assert a.provenance["wall_clock_s"] >= 0 and a.provenance["seed"] == 3


def test_config_validation():
    bad = [dict(kind="nope"), dict(kind="crossing", replicas=0), dict(kind="crossing", u=0),
           dict(kind="crossing", d=2), dict(kind="crossing", margin=-1),
           dict(kind="crossing", epsilon=0), dict(kind="qip", site_set="all"),
           dict(kind="crossing", N_grid=(32, 16)), dict(kind="crossing", N_grid=())]
    for kw in bad:
        with pytest.raises(ValueError):
            E.ExperimentConfig(**kw)
    cfg = E.ExperimentConfig("crossing", N_grid=[4, 8])
    assert cfg.N_grid == (4, 8)
    assert cfg.to_dict()["N_grid"] == [4, 8]


def test_runner_preconditions():
    with pytest.raises(ValueError):
        E.run(small("crossing", N_grid=(4, 16)))
    with pytest.raises(ValueError):
        E.run(small("chemdist", targets=(4, 20)))
    with pytest.raises(ValueError):
        E.run(small("uniqueness", R_grid=(4, 7)))
    with pytest.raises(ValueError):
        E.run(small("shape", n_grid=(4, 40)))
    with pytest.raises(ValueError):
        E.run(small("validate", K_radius=9))


def test_margin_resolution():
    cfg = E.ExperimentConfig("crossing", T=50.0, N=8)
    m = cfg.resolved_margin()
    assert m > 0 and cfg.resolved_margin() == m
    assert dataclasses.replace(cfg, margin=3).resolved_margin() == 3
    assert cfg.resolved_margin(window_radius=2) <= m


def test_replica_seeds_distinct():
    seeds = {E.replica_seed(0, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert E.replica_seed(0, 1) != E.replica_seed(0, 1, E._TAG_THIN)


def test_default_threads(monkeypatch):
    monkeypatch.setenv("FRI_LAB_THREADS", "4")
    assert E.default_threads() == 4
    monkeypatch.delenv("FRI_LAB_THREADS")
    assert E.default_threads() == 1


def test_failed_checks_ignore_non_gating():
    rec = E.ExperimentRecord(small("crossing"), [], {"checks": {
        "a": E._check(False), "b": E._check(False, gating=False), "c": E._check(True)}})
    assert rec.failed_checks() == ["a"]


def test_strict_makes_thresholds_gate():
    lax = E.run(small("crossing"))
    strict = E.run(small("crossing", strict=True))
    thresholds = {"nondecreasing_within_ci", "lower_bound_at_max_N_0.97"}
    assert not thresholds & set(lax.failed_checks())
    assert all(strict.checks[k]["gating"] for k in thresholds)
    assert lax.checks == {k: {**v, "gating": False if k in thresholds else v["gating"]}
                          for k, v in strict.checks.items()}
    with pytest.raises(ValueError):
        small("crossing", strict=1)


def test_frequency_intervals_use_ci_confidence():
    rows = [{"violated": [False]} for _ in range(500)]
    cfg = small("uniqueness", R_grid=(1,))
    agg = E._uniqueness_aggregate(cfg, rows)
    assert agg["confidence"] == 0.95
    assert agg["per_R"][0]["hi"] == pytest.approx(1.959964 ** 2 / (500 + 1.959964 ** 2))
    assert agg["checks"]["upper_bound_at_max_R_0.01"]["passed"]
    tight = E._uniqueness_aggregate(dataclasses.replace(cfg, ci_confidence=0.99), rows)
    assert not tight["checks"]["upper_bound_at_max_R_0.01"]["passed"]
    with pytest.raises(ValueError):
        small("uniqueness", ci_confidence=1.0)


def test_fin():
    assert E._fin(float("nan")) is None and E._fin(float("inf")) == "inf"
    assert E._fin(float("-inf")) == "-inf" and E._fin(2) == 2.0 and E._fin(None) is None


def test_validate_with_few_replicas_fails_gof_checks():
    rec = E.run(small("validate"))
    assert not rec.checks["hit_count"]["passed"]
    assert "50" in rec.aggregates["tests"]["hit_count"]["error"]
    assert rec.checks["lengths"]["passed"] in (True, False)


def test_chemdist_rows_are_consistent():
    rec = E.run(small("chemdist"))
    for row in rec.rows:
        for t in row["targets"]:
            if t["rho"] is not None:
                assert row["origin_in_giant"] and t["in_giant"]
                assert t["rho"] >= t["y"]
                if t["y"] == 0:
                    assert t["rho"] == 0 and t["ratio"] == 0


def test_ray_directions_closed_under_symmetry():
    from fri_lab.stats import signed_permutations
    dirs = E.ray_directions(3)
    assert len(dirs) == 98
    have = {tuple(v) for v in dirs}
    for g in signed_permutations(3):
        assert {tuple(int(c) for c in g @ v) for v in dirs} == have


def test_radial_profile_on_full_lattice():
    w = Box.origin(3, 6)
    b = BondConfig.full(w)
    dist = distance_field(b, [(0, 0, 0)])
    prof = E.radial_profile(dist, w, 4, np.array([[1, 0, 0], [1, 1, 0]]))
    # chemical distance is the l1 norm on the full lattice
    assert prof[0] == pytest.approx(1.0)
    assert prof[1] == pytest.approx(2 * np.sqrt(2) / 4)


def test_convexity_deficit():
    gen = np.random.default_rng(0)
    cube = Box.origin(3, 3).sites()
    assert E.convexity_deficit(cube, lambda q: np.ones(len(q), bool), gen) == 0.0
    hollow = lambda q: np.abs(q).max(axis=1) >= 2  # noqa: E731
    assert 0.05 < E.convexity_deficit(cube, hollow, gen) < 0.2
    assert E.convexity_deficit(np.zeros((2, 3)), hollow, gen) == 0.0


def test_qip_moments_on_synthetic_walks():
    gen = np.random.default_rng(1)
    rows = []
    for i in range(60):
        walks = [{"displacement": [list(gen.normal(0, 10, 3)), list(gen.normal(0, 20, 3))],
                  "touched_boundary": False} for _ in range(4)]
        walks.append({"displacement": [[1e6, 0, 0], [1e6, 0, 0]], "touched_boundary": True})
        rows.append({"replica": i, "walks": walks})
    mom = E.qip_moments(rows, (100, 400), 3)
    assert mom["100"]["walks"] == 240
    assert mom["100"]["diffusivity"] == pytest.approx(1.0, rel=0.2)
    assert mom["400"]["diffusivity"] == pytest.approx(1.0, rel=0.2)
    assert E.qip_moments([], (100,), 3) == {"100": None}


def test_crossing_vs_u_is_monotone():
    freqs = E.crossing_vs_u(small("crossing", replicas=6), [0.5, 1.0, 3.0], 6)
    assert freqs == sorted(freqs)
