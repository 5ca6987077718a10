"""Replicated simulation experiments.

Each ``run_*`` function maps an :class:`ExperimentConfig` to an
:class:`ExperimentRecord`: one JSON-ready row per replica plus aggregates
computed from those rows alone (``aggregate(cfg, rows)`` recomputes them).
A replica's randomness depends only on the master seed and its index, so
rows are identical for any thread count.
"""
from __future__ import annotations

import dataclasses
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.spatial import ConvexHull

from . import __version__
from . import _kernels as K
from . import potential, sampler, stats
from .cluster import (BondConfig, build_clusters, crossing_exists, distance_field, giant_root,
                      local_uniqueness_violated)
from .lattice import Box
from .rng import derive
from .sampler import FriParams

KINDS = ("chemdist", "shape", "uniqueness", "crossing", "qip", "validate", "t_sweep")
SITE_SETS = ("giant", "occupied")

# stream tags under the master seed
_TAG_REPLICA = 0xE1
_TAG_THIN = 0xE2
_TAG_LUCKY = 0xE3
_TAG_WALK = 0xE4
_TAG_HULL = 0xE5


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one experiment.

    ``N`` is the window radius: the window is ``B(N)`` centred at the
    origin. With ``margin`` unset, the margin follows
    :func:`sampler.recommended_margin` at ``epsilon``.
    """

    kind: str
    d: int = 3
    u: float = 1.0
    T: float = 100.0
    N: int = 32
    replicas: int = 10
    seed: int = 0
    margin: Optional[int] = None
    epsilon: float = 1e-3
    alpha: float = 0.01
    # confidence of the Wilson intervals on event frequencies
    ci_confidence: float = 0.95
    # chemdist, t_sweep
    targets: tuple = (16, 32, 48, 64)
    T_grid: tuple = (25.0, 50.0, 100.0, 200.0)
    # shape
    n_grid: tuple = (20, 40, 80)
    # uniqueness
    R_grid: tuple = (10, 20, 40)
    # crossing
    N_grid: tuple = (16, 32, 64)
    # qip
    horizons: tuple = (5000, 10000)
    walks_per_env: int = 1
    site_set: str = "giant"
    max_attempts: int = 100
    # validate
    K_radius: int = 3
    A_radii: tuple = (2, 4, 6)
    lucky_T: Optional[float] = None
    sub_replicas: int = 200
    thin_N: int = 32
    # threshold checks also gate failed_checks (and the CLI exit code)
    strict: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.replicas < 1:
            raise ValueError("replicas must be at least 1")
        if not self.u > 0 or not self.T > 0:
            raise ValueError("u and T must be positive")
        if self.d < 3:
            raise ValueError("d must be at least 3")
        if self.N < 1:
            raise ValueError("N must be positive")
        if self.margin is not None and self.margin < 0:
            raise ValueError("margin must be non-negative")
        if not 0 < self.epsilon < 1 or not 0 < self.alpha < 1:
            raise ValueError("epsilon and alpha must lie in (0, 1)")
        if not 0 < self.ci_confidence < 1:
            raise ValueError("ci_confidence must lie in (0, 1)")
        if self.site_set not in SITE_SETS:
            raise ValueError(f"site_set must be one of {SITE_SETS}")
        if not isinstance(self.strict, bool):
            raise ValueError("strict must be a bool")
        if self.walks_per_env < 1 or self.max_attempts < 1 or self.sub_replicas < 1:
            raise ValueError("walks_per_env, max_attempts and sub_replicas must be positive")
        for name in ("targets", "T_grid", "n_grid", "R_grid", "N_grid", "horizons", "A_radii"):
            grid = tuple(getattr(self, name))
            object.__setattr__(self, name, grid)
            if not grid:
                raise ValueError(f"{name} must be nonempty")
            if list(grid) != sorted(grid):
                raise ValueError(f"{name} must be sorted")

    @property
    def fri(self) -> FriParams:
        return FriParams(self.u, self.T, self.d)

    @property
    def window(self) -> Box:
        return Box.origin(self.d, self.N)

    def resolved_margin(self, T: Optional[float] = None, window_radius: Optional[int] = None) -> int:
        if self.margin is not None:
            return self.margin
        return _margin_rule(float(self.T if T is None else T), self.epsilon, self.u, self.d,
                            self.N if window_radius is None else window_radius)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in dataclasses.fields(self)}


@lru_cache(maxsize=64)
def _margin_rule(T, epsilon, u, d, radius):
    return sampler.recommended_margin(T, epsilon, u=u, d=d, window_radius=radius)


@dataclass
class ExperimentRecord:
    config: ExperimentConfig
    rows: list
    aggregates: dict
    provenance: dict = field(default_factory=dict)

    @property
    def checks(self) -> dict:
        return self.aggregates.get("checks", {})

    def failed_checks(self) -> list[str]:
        return [k for k, v in self.checks.items() if v.get("gating", True) and not v["passed"]]


def replica_seed(master: int, index: int, tag: int = _TAG_REPLICA) -> int:
    return derive(master, tag, index)


def default_threads() -> int:
    env = os.environ.get("FRI_LAB_THREADS")
    return max(1, int(env)) if env else 1


def map_replicas(fn: Callable[[int], dict], n: int, threads: Optional[int] = None) -> list:
    """``[fn(0), ..., fn(n-1)]``, evaluated on a thread pool."""
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or n == 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


def _check(passed, gating: bool = True, **info) -> dict:
    """A named pass/fail outcome. Law checks (sampler distributions, exact
    properties, run validity) always gate; acceptance thresholds that only
    hold in particular parameter regimes gate under ``cfg.strict``."""
    return {"passed": bool(passed), "gating": bool(gating), **info}


def _fin(x) -> Optional[float]:
    """JSON-safe float: None for nan, the string "inf" for infinity."""
    if x is None:
        return None
    x = float(x)
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _window_sample(cfg: ExperimentConfig, seed: int, margin: int, *, u: Optional[float] = None,
                   T: Optional[float] = None, N: Optional[int] = None) -> BondConfig:
    p = FriParams(cfg.u if u is None else u, cfg.T if T is None else T, cfg.d)
    return sampler.sample_bonds(p, Box.origin(cfg.d, cfg.N if N is None else N), margin, seed)


def _giant(b: BondConfig):
    lab = build_clusters(b)
    root = giant_root(lab)
    return lab, root


def _axis_site(d: int, k: int) -> tuple:
    return (int(k),) + (0,) * (d - 1)


# -- chemical distance -------------------------------------------------------

def _chemdist_row(cfg: ExperimentConfig, margin: int, i: int, T: Optional[float] = None) -> dict:
    seed = replica_seed(cfg.seed, i)
    b = _window_sample(cfg, seed, margin, T=T)
    lab, root = _giant(b)
    w = b.window
    origin = (0,) * cfg.d
    oi = w.index(origin)
    in0 = root is not None and lab.labels[oi] == root
    dist = distance_field(b, [origin]) if in0 else None
    out = []
    for k in cfg.targets:
        y = _axis_site(cfg.d, k)
        yi = w.index(y)
        iny = root is not None and lab.labels[yi] == root
        rho = ratio = None
        if in0 and iny:
            rho = int(dist[yi])
            ratio = 0.0 if k == 0 else rho / k
        out.append({"y": int(k), "in_giant": bool(iny), "rho": rho, "ratio": ratio})
    return {"replica": i, "seed": seed, "origin_in_giant": bool(in0),
            "giant_size": int(lab.sizes[np.searchsorted(lab.roots, root)]) if root is not None else 0,
            "targets": out}


def _chemdist_aggregate(cfg: ExperimentConfig, rows: list) -> dict:
    per = {}
    xs, ys, all_ratios = [], [], []
    for k in cfg.targets:
        r = [t["ratio"] for row in rows for t in row["targets"] if t["y"] == k and t["ratio"] is not None]
        s = stats.summarize(r, (0.5, 0.99))
        per[str(k)] = {**s.to_dict(), "max": _fin(max(r)) if r else None}
        for row in rows:
            for t in row["targets"]:
                if t["y"] == k and t["rho"] is not None:
                    xs.append(k)
                    ys.append(t["rho"])
        all_ratios += [x for x in r if k > 0]
    means = [per[str(k)]["mean"] for k in cfg.targets if k > 0 and per[str(k)]["n"] > 0]
    spread = (max(means) - min(means)) / min(means) if means and min(means) > 0 else math.nan
    fit = stats.linear_fit(xs, ys).to_dict() if len(set(xs)) >= 2 else None
    cond = sum(1 for row in rows if row["origin_in_giant"]) / len(rows)
    pair = [sum(1 for row in rows if row["origin_in_giant"] and t["in_giant"]) / len(rows)
            for t in (rows[0]["targets"] if rows else [])]
    tail_ok = all(per[str(k)]["n"] > 0 and math.isfinite(per[str(k)]["quantiles"][1][1])
                  and per[str(k)]["quantiles"][1][1] < 2 * per[str(k)]["mean"]
                  for k in cfg.targets if k > 0)
    checks = {
        "ratio_spread_below_0.15": _check(math.isfinite(spread) and spread < 0.15, cfg.strict,
                                           spread=_fin(spread)),
        "p99_below_twice_mean": _check(tail_ok, cfg.strict),
        "ratio_at_least_one": _check(all(x >= 1 for x in all_ratios)),
    }
    if fit is not None:
        checks["linear_fit_r2_0.95"] = _check(fit["r2"] >= 0.95, gating=False, r2=_fin(fit["r2"]))
    return {"per_target": per, "ratio_spread": _fin(spread), "fit": fit,
            "origin_in_giant_fraction": cond, "pair_conditioned_fraction": pair,
            "conditioning_failure_fraction": 1 - cond, "checks": checks}


def run_chemical_distance(cfg: ExperimentConfig, threads: Optional[int] = None) -> ExperimentRecord:
    """Chemical distance ``rho(0, y)`` for targets ``y = (k, 0, ..., 0)``,
    conditioned on both ends lying in the giant boundary-touching cluster."""
    if max(cfg.targets) > cfg.N or min(cfg.targets) < 0:
        raise ValueError("targets must lie in [0, N]")
    margin = cfg.resolved_margin()
    return _record(cfg, margin, map_replicas(lambda i: _chemdist_row(cfg, margin, i), cfg.replicas, threads))


# -- shape -------------------------------------------------------------------

def ray_directions(d: int, reach: int = 2) -> np.ndarray:
    """Primitive integer vectors with entries in ``[-reach, reach]``; the set is
    closed under signed permutations."""
    g = np.stack(np.meshgrid(*[np.arange(-reach, reach + 1)] * d, indexing="ij"), -1).reshape(-1, d)
    g = g[np.any(g != 0, axis=1)]
    gcd = np.gcd.reduce(np.abs(g), axis=1)
    return g[gcd == 1]


def radial_profile(dist: np.ndarray, w: Box, n: int, dirs: np.ndarray) -> np.ndarray:
    """For each direction ``v``, ``max |k v|_2 / n`` over ``k >= 0`` with ``k v``
    within chemical distance ``n``."""
    D = dist.reshape(w.shape)
    out = np.zeros(len(dirs))
    c = np.asarray(w.center)
    for j, v in enumerate(dirs):
        kmax = w.radius // int(np.abs(v).max())
        ks = np.arange(kmax + 1)
        pts = c + ks[:, None] * v - w.lo
        vals = D[tuple(pts.T)]
        ok = np.nonzero((vals >= 0) & (vals <= n))[0]
        out[j] = ks[ok.max()] * float(np.linalg.norm(v)) / n if len(ok) else 0.0
    return out


def convexity_deficit(points: np.ndarray, member: Callable[[np.ndarray], np.ndarray],
                      gen: np.random.Generator, samples: int = 20000) -> float:
    """Fraction of lattice points inside the convex hull of ``points`` that are
    not members, estimated from uniform samples of the bounding box."""
    if len(points) < points.shape[1] + 1:
        return 0.0
    try:
        hull = ConvexHull(points)
    except Exception:  # flat point sets have no full-dimensional hull
        return 0.0
    lo, hi = points.min(axis=0), points.max(axis=0)
    q = gen.integers(lo, hi + 1, size=(samples, points.shape[1]))
    inside = np.all(q @ hull.equations[:, :-1].T + hull.equations[:, -1] <= 1e-9, axis=1)
    q = q[inside]
    if len(q) == 0:
        return 0.0
    return float(1.0 - member(q).mean())


def _shape_row(cfg: ExperimentConfig, margin: int, i: int) -> dict:
    seed = replica_seed(cfg.seed, i)
    b = _window_sample(cfg, seed, margin)
    lab, root = _giant(b)
    w = b.window
    origin = (0,) * cfg.d
    in0 = root is not None and lab.labels[w.index(origin)] == root
    row = {"replica": i, "seed": seed, "origin_in_giant": bool(in0),
           "sizes": None, "hausdorff": None, "radial": None, "convexity_deficit": None}
    if not in0:
        return row
    nmax = max(cfg.n_grid)
    dist = distance_field(b, [origin], max_dist=nmax)
    reach = np.nonzero(dist >= 0)[0]
    dvals = dist[reach]
    coords = w.coords(reach).reshape(-1, cfg.d)
    balls = [coords[dvals <= n] for n in cfg.n_grid]
    hs = [stats.lattice_hausdorff(balls[j], cfg.n_grid[j], balls[j + 1], cfg.n_grid[j + 1])
          for j in range(len(balls) - 1)]
    dirs = ray_directions(cfg.d)
    radial = radial_profile(dist, w, nmax, dirs)
    gen = np.random.Generator(np.random.PCG64(replica_seed(cfg.seed, i, _TAG_HULL)))
    D = dist.reshape(w.shape)

    def member(q):
        v = D[tuple((q - w.lo).T)]
        return (v >= 0) & (v <= nmax)

    row.update(sizes=[int(len(x)) for x in balls], hausdorff=hs,
               radial=[float(x) for x in radial],
               convexity_deficit=convexity_deficit(balls[-1], member, gen))
    return row


def mean_shape_points(rows: list, d: int) -> np.ndarray:
    """Points ``r(v) v/|v|`` of the mean radial profile over conditioned rows."""
    prof = [r["radial"] for r in rows if r["radial"] is not None]
    if not prof:
        return np.zeros((1, d))
    dirs = ray_directions(d).astype(float)
    mean = np.mean(np.asarray(prof), axis=0)
    return dirs / np.linalg.norm(dirs, axis=1)[:, None] * mean[:, None]


def _shape_aggregate(cfg: ExperimentConfig, rows: list) -> dict:
    ok = [r for r in rows if r["origin_in_giant"]]
    steps = np.asarray([r["hausdorff"] for r in ok], dtype=float).reshape(len(ok), -1)
    if steps.shape[1] >= 2 and len(ok):
        decreasing = np.all(np.diff(steps, axis=1) < 0, axis=1)
        frac = float(decreasing.mean())
    else:
        frac = math.nan
    pts = mean_shape_points(rows, cfg.d)
    sym = stats.symmetry_score(pts) if ok else math.nan
    conv = stats.summarize([r["convexity_deficit"] for r in ok], (0.5,))
    per_step = [stats.summarize(steps[:, j], (0.5,)).to_dict() for j in range(steps.shape[1])]
    return {
        "conditioned": len(ok), "conditioning_failure_fraction": 1 - len(ok) / len(rows),
        "hausdorff_steps": per_step, "decreasing_fraction": _fin(frac),
        "symmetry_score": _fin(sym), "convexity_deficit": conv.to_dict(),
        "mean_radial": [_fin(x) for x in np.mean([r["radial"] for r in ok], axis=0)] if ok else [],
        "checks": {
            "decreasing_fraction_0.8": _check(math.isfinite(frac) and frac >= 0.8, cfg.strict, value=_fin(frac)),
            "symmetry_score_0.9": _check(math.isfinite(sym) and sym >= 0.9, cfg.strict, value=_fin(sym)),
        },
    }


def run_shape(cfg: ExperimentConfig, threads: Optional[int] = None) -> ExperimentRecord:
    """Chemical balls ``Lambda(n)`` around the origin over the ``n``-grid;
    successive rescaled balls should draw together in Hausdorff distance."""
    if len(cfg.n_grid) < 2:
        raise ValueError("n_grid needs at least two values")
    if max(cfg.n_grid) > cfg.N:
        raise ValueError("n_grid exceeds the window")
    margin = cfg.resolved_margin()
    return _record(cfg, margin, map_replicas(lambda i: _shape_row(cfg, margin, i), cfg.replicas, threads))


# -- local uniqueness ----------------------------------------------------------

def _uniqueness_row(cfg: ExperimentConfig, margin: int, i: int) -> dict:
    seed = replica_seed(cfg.seed, i)
    b = _window_sample(cfg, seed, margin)
    return {"replica": i, "seed": seed,
            "violated": [bool(local_uniqueness_violated(b, R)) for R in cfg.R_grid]}


def _frequency_table(rows: list, key: str, grid, name: str, confidence: float) -> list:
    out = []
    for j, g in enumerate(grid):
        k = sum(1 for r in rows if r[key][j])
        lo, hi = stats.wilson_interval(k, len(rows), confidence)
        out.append({name: g, "count": k, "trials": len(rows), "freq": k / len(rows), "lo": lo, "hi": hi})
    return out


def _uniqueness_aggregate(cfg: ExperimentConfig, rows: list) -> dict:
    conf = cfg.ci_confidence
    table = _frequency_table(rows, "violated", cfg.R_grid, "R", conf)
    mono = stats.nonincreasing_within_ci([(t["lo"], t["hi"]) for t in table])
    return {"per_R": table, "confidence": conf, "checks": {
        "nonincreasing_within_ci": _check(mono, cfg.strict),
        "upper_bound_at_max_R_0.01": _check(table[-1]["hi"] <= 0.01, cfg.strict, value=table[-1]["hi"]),
    }}


def run_local_uniqueness(cfg: ExperimentConfig, threads: Optional[int] = None) -> ExperimentRecord:
    if cfg.N < 2 * max(cfg.R_grid):
        raise ValueError("window radius must be at least 2 * max(R_grid)")
    margin = cfg.resolved_margin()
    return _record(cfg, margin, map_replicas(lambda i: _uniqueness_row(cfg, margin, i), cfg.replicas, threads))


# -- crossing ------------------------------------------------------------------

def _crossing_row(cfg: ExperimentConfig, margin: int, i: int) -> dict:
    seed = replica_seed(cfg.seed, i)
    b = _window_sample(cfg, seed, margin)
    return {"replica": i, "seed": seed,
            "crossing": [bool(crossing_exists(b, Box.origin(cfg.d, n), 1)) for n in cfg.N_grid]}


def _crossing_aggregate(cfg: ExperimentConfig, rows: list) -> dict:
    conf = cfg.ci_confidence
    table = _frequency_table(rows, "crossing", cfg.N_grid, "N", conf)
    mono = stats.nondecreasing_within_ci([(t["lo"], t["hi"]) for t in table])
    fit = None
    fails = [(t["N"] ** (cfg.d - 1), math.log(1 - t["freq"])) for t in table if 0 < t["freq"] < 1]
    if len({x for x, _ in fails}) >= 2:
        fit = stats.linear_fit(*zip(*fails)).to_dict()
    return {"per_N": table, "confidence": conf, "decay_fit": fit, "checks": {
        "nondecreasing_within_ci": _check(mono, cfg.strict),
        "lower_bound_at_max_N_0.97": _check(table[-1]["lo"] >= 0.97, cfg.strict, value=table[-1]["lo"]),
    }}


def run_crossing(cfg: ExperimentConfig, threads: Optional[int] = None) -> ExperimentRecord:
    """Left-right crossings of ``B(n)`` inside ``B(n)`` for each ``n`` of the grid,
    all read off one window sample per replica."""
    if max(cfg.N_grid) > cfg.N:
        raise ValueError("N_grid exceeds the window")
    margin = cfg.resolved_margin()
    return _record(cfg, margin, map_replicas(lambda i: _crossing_row(cfg, margin, i), cfg.replicas, threads))


def crossing_vs_u(cfg: ExperimentConfig, u_grid, n: int, threads: Optional[int] = None) -> list:
    """Crossing frequency of ``B(n)`` at each ``u`` of ``u_grid``, with the
    samples of one replica coupled monotonically in ``u`` (shared trajectories,
    thinned from ``max(u_grid)``)."""
    u_grid = sorted(float(x) for x in u_grid)
    u_ref = u_grid[-1]
    margin = cfg.resolved_margin()

    def row(i):
        seed = replica_seed(cfg.seed, i)
        out = []
        for u in u_grid:
            b = sampler.sample_bonds(FriParams(u, cfg.T, cfg.d), cfg.window, margin, seed, u_ref=u_ref)
            out.append(bool(crossing_exists(b, Box.origin(cfg.d, n), 1)))
        return out

    rows = map_replicas(row, cfg.replicas, threads)
    return [sum(r[j] for r in rows) / len(rows) for j in range(len(u_grid))]


# -- quenched invariance principle -----------------------------------------------

def _qip_row(cfg: ExperimentConfig, margin: int, i: int) -> dict:
    w = cfg.window
    centre = np.full(cfg.d, cfg.N, dtype=np.int64)
    for attempt in range(cfg.max_attempts):
        seed = derive(cfg.seed, _TAG_REPLICA, i, attempt)
        b = _window_sample(cfg, seed, margin)
        lab, root = _giant(b)
        oi = w.index((0,) * cfg.d)
        if cfg.site_set == "giant":
            ok = root is not None and lab.labels[oi] == root
            mask = (lab.labels == root) if ok else None
        else:
            ok = b.is_occupied((0,) * cfg.d)
            mask = (b.flat & K.OCC) != 0
        if ok:
            break
    else:
        return {"replica": i, "seed": seed, "attempts": cfg.max_attempts, "walks": []}
    mask = mask.astype(np.uint8).reshape(w.shape)
    walks = []
    hz = list(cfg.horizons)
    for j in range(cfg.walks_per_env):
        key = derive(seed, _TAG_WALK, j)
        pos, touched = K.lazy_walk(mask, w.shape, centre, max(hz), key, np.asarray(hz, dtype=np.int64))
        disp = (np.asarray(pos) - centre).tolist()
        walks.append({"displacement": disp, "touched_boundary": bool(touched)})
    return {"replica": i, "seed": seed, "attempts": attempt + 1, "walks": walks}


def qip_moments(rows: list, horizons, d: int) -> dict:
    """Per horizon: mean displacement, covariance of ``X_n/sqrt(n)`` and their
    environment-clustered standard errors, over walks that stayed inside."""
    out = {}
    for h_i, n in enumerate(horizons):
        X, env = [], []
        for r in rows:
            for w in r["walks"]:
                if not w["touched_boundary"]:
                    X.append(w["displacement"][h_i])
                    env.append(r["replica"])
        X = np.asarray(X, dtype=float).reshape(-1, d) / math.sqrt(n)
        if len(X) < 2:
            out[str(n)] = None
            continue
        mean = [stats.cluster_robust_mean(X[:, a], env) for a in range(d)]
        cov, cov_se = np.zeros((d, d)), np.zeros((d, d))
        for a in range(d):
            for c in range(d):
                m, se = stats.cluster_robust_mean(X[:, a] * X[:, c], env)
                cov[a, c], cov_se[a, c] = m, se
        diag_diff = {}
        for a in range(d):
            for c in range(a + 1, d):
                m, se = stats.cluster_robust_mean(X[:, a] ** 2 - X[:, c] ** 2, env)
                diag_diff[f"{a}{c}"] = [m, se]
        out[str(n)] = {"walks": len(X), "mean": [[m, s] for m, s in mean], "cov": cov.tolist(),
                       "cov_stderr": cov_se.tolist(), "diag_diff": diag_diff,
                       "diffusivity": float(np.trace(cov) / d)}
    return out


def _qip_aggregate(cfg: ExperimentConfig, rows: list) -> dict:
    hz = list(cfg.horizons)
    mom = qip_moments(rows, hz, cfg.d)
    n_walks = sum(len(r["walks"]) for r in rows)
    discarded = sum(1 for r in rows for w in r["walks"] if w["touched_boundary"])
    attempts = [r["attempts"] for r in rows]
    top = mom.get(str(hz[-1]))
    checks = {"discards_below_5pct": _check(n_walks > 0 and discarded / n_walks < 0.05,
                                            value=discarded / max(n_walks, 1))}
    if top is not None:
        checks["mean_zero_3se"] = _check(all(abs(m) <= 3 * s for m, s in top["mean"]), cfg.strict)
        off = [(top["cov"][a][c], top["cov_stderr"][a][c])
               for a in range(cfg.d) for c in range(a + 1, cfg.d)]
        checks["offdiag_zero_3se"] = _check(all(abs(m) <= 3 * s for m, s in off), cfg.strict)
        checks["diag_equal_3se"] = _check(all(abs(m) <= 3 * s for m, s in top["diag_diff"].values()),
                                          cfg.strict)
    if len(hz) >= 2 and mom.get(str(hz[0])) and top:
        ratio = mom[str(hz[0])]["diffusivity"] / top["diffusivity"]
        checks["diffusivity_stable_0.15"] = _check(abs(ratio - 1) <= 0.15, cfg.strict, value=ratio)
    return {"moments": mom, "walks": n_walks, "discarded": discarded,
            "discard_fraction": discarded / max(n_walks, 1),
            "attempts": stats.summarize(attempts, (0.5,)).to_dict(),
            "environments_failed": sum(1 for r in rows if not r["walks"]), "checks": checks}


def run_qip(cfg: ExperimentConfig, threads: Optional[int] = None) -> ExperimentRecord:
    """Lazy walks from the origin on the giant cluster (or all occupied sites);
    environments are resampled until the origin qualifies."""
    margin = cfg.resolved_margin()
    return _record(cfg, margin, map_replicas(lambda i: _qip_row(cfg, margin, i), cfg.replicas, threads))


# -- model validation ----------------------------------------------------------

def _validate_row(cfg: ExperimentConfig, margin: int, i: int) -> dict:
    p = cfg.fri
    seed = replica_seed(cfg.seed, i)
    kb = Box.origin(cfg.d, cfg.K_radius)
    padded = kb.padded(margin)
    A = [tuple(x) for x in kb.sites()]
    starts, _, _ = sampler.sample_hit_trajectories(p, A, padded, seed)
    local = sampler.sample_window(p, kb, 0, seed)
    row = {"replica": i, "seed": seed, "hits": int(len(starts)),
           "site_counts": [int(x) for x in stats.histogram(local.site_counts())],
           "lengths": [int(x) for x in local.lengths],
           "thin": None, "lucky": None}
    if i < cfg.sub_replicas:
        tw = Box.origin(cfg.d, cfg.thin_N)
        tm = cfg.resolved_margin(window_radius=cfg.thin_N)
        direct = sampler.sample_bonds(p, tw, tm, replica_seed(cfg.seed, i, _TAG_THIN))
        union = sampler.thin_bonds(p, [1 / 3, 1 / 3, 1 / 3], tw, tm,
                                   replica_seed(cfg.seed, cfg.replicas + i, _TAG_THIN))
        row["thin"] = {"direct": _bond_summary(direct), "union": _bond_summary(union)}
        lp = FriParams(cfg.u, cfg.lucky_T or cfg.T, cfg.d)
        ls = replica_seed(cfg.seed, i, _TAG_LUCKY)
        row["lucky"] = [sampler.sample_lucky_count(lp, (0,) * cfg.d,
                                                   [tuple(x) for x in Box.origin(cfg.d, r).sites()], ls)
                        for r in cfg.A_radii]
    return row


def _bond_summary(b: BondConfig) -> dict:
    lab, root = _giant(b)
    giant = int(lab.sizes[np.searchsorted(lab.roots, root)]) if root is not None else 0
    return {"bond_density": b.bond_density, "giant_fraction": giant / b.window.volume}


@lru_cache(maxsize=32)
def _ball_cap(R: int, d: int, s: float) -> float:
    return potential.ball_capacity(R, d, s)


def _gof(test, data, param, alpha) -> stats.TestResult:
    """Run ``test``; too few observations give a failed result."""
    try:
        return test(data, param, alpha)
    except ValueError as e:
        return stats.TestResult(math.nan, 0.0, alpha, None, {"error": str(e)})


def _validate_aggregate(cfg: ExperimentConfig, rows: list) -> dict:
    a = cfg.alpha
    s = cfg.T / (cfg.T + 1)
    capT = _ball_cap(cfg.K_radius, cfg.d, s)
    hits = stats.histogram([r["hits"] for r in rows])
    mean_lit = cfg.u * capT
    mean_fri = 2 * cfg.d * cfg.u * capT
    t_lit = _gof(stats.poisson_gof, hits, mean_lit, a)
    t_fri = _gof(stats.poisson_gof, hits, mean_fri, a)
    sc = np.zeros(max(len(r["site_counts"]) for r in rows))
    for r in rows:
        sc[: len(r["site_counts"])] += r["site_counts"]
    t_site = _gof(stats.poisson_gof, sc, cfg.fri.site_rate, a)
    lengths = [x for r in rows for x in r["lengths"]]
    t_len = _gof(stats.geometric_gof, lengths, cfg.T, a)
    sub = [r for r in rows if r["thin"] is not None]
    out = {"cap_T": capT, "hit_mean": float(np.mean([r["hits"] for r in rows])),
           "hit_var": float(np.var([r["hits"] for r in rows], ddof=1)) if len(rows) > 1 else None,
           "hit_mean_literal": mean_lit, "hit_mean_fri": mean_fri,
           "tests": {"hit_count_literal": t_lit.to_dict(), "hit_count": t_fri.to_dict(),
                     "site_counts": t_site.to_dict(), "lengths": t_len.to_dict()}}
    checks = {
        "hit_count_literal": _check(t_lit.passed, gating=False, p_value=t_lit.p_value),
        "hit_count": _check(t_fri.passed, p_value=t_fri.p_value),
        "site_counts": _check(t_site.passed, p_value=t_site.p_value),
        "lengths": _check(t_len.passed, p_value=t_len.p_value),
    }
    if len(sub) >= 2:
        for key in ("bond_density", "giant_fraction"):
            t = stats.welch_test([r["thin"]["direct"][key] for r in sub],
                                 [r["thin"]["union"][key] for r in sub], a)
            out["tests"][f"thin_{key}"] = t.to_dict()
            checks[f"thin_{key}"] = _check(t.passed, p_value=t.p_value)
        lT = cfg.lucky_T or cfg.T
        caps = [_ball_cap(r, cfg.d, 1.0) for r in cfg.A_radii]
        xs = [caps[j] for r in sub for j in range(len(caps))]
        ys = [r["lucky"][j] for r in sub for j in range(len(caps))]
        if len(set(xs)) >= 2:
            fit = stats.linear_fit(xs, ys)
            t = stats.slope_test(fit, a)
            out["lucky"] = {"T": lT, "capacities": caps, "fit": fit.to_dict(),
                            "means": [float(np.mean([r["lucky"][j] for r in sub])) for j in range(len(caps))]}
            out["tests"]["lucky_slope"] = t.to_dict()
            checks["lucky_slope_positive"] = _check(fit.slope > 0 and t.rejected, cfg.strict,
                                                    p_value=t.p_value)
    out["checks"] = checks
    return out


def run_model_validation(cfg: ExperimentConfig, threads: Optional[int] = None) -> ExperimentRecord:
    """Distributional checks of the sampler.

    The hit-count law is tested against both ``u cap^(T)(K)`` (reported,
    non-gating) and ``2du cap^(T)(K)``, the mean implied by the per-site
    rate ``2du/(T+1)``: summing the killed Green's function over start sites
    gives ``T + 1`` per unit of equilibrium mass.
    """
    margin = cfg.resolved_margin(window_radius=cfg.K_radius)
    if cfg.K_radius > cfg.N:
        raise ValueError("K must lie in the window")
    return _record(cfg, margin, map_replicas(lambda i: _validate_row(cfg, margin, i), cfg.replicas, threads))


# -- T sweep ---------------------------------------------------------------------

def _tsweep_rows(cfg: ExperimentConfig, threads):
    rows = []
    for T in cfg.T_grid:
        sub = dataclasses.replace(cfg, T=float(T))
        margin = sub.resolved_margin()
        r = map_replicas(lambda i: _chemdist_row(sub, margin, i, T=float(T)), cfg.replicas, threads)
        rows += [{"T": float(T), "margin": margin, **x} for x in r]
    return rows


def _tsweep_aggregate(cfg: ExperimentConfig, rows: list) -> dict:
    per = []
    for T in cfg.T_grid:
        sub = [r for r in rows if r["T"] == float(T)]
        agg = _chemdist_aggregate(dataclasses.replace(cfg, T=float(T)), sub)
        r = [t["ratio"] for row in sub for t in row["targets"] if t["ratio"] is not None and t["y"] > 0]
        s = stats.summarize(r, (0.5,))
        z = 1.959963984540054
        per.append({"T": float(T), "slope": _fin(s.mean), "lo": _fin(s.mean - z * s.stderr),
                    "hi": _fin(s.mean + z * s.stderr), "n": s.n, "chemdist": agg})
    ok = all(p["n"] == 0 or p["slope"] >= 1 for p in per)
    return {"per_T": per, "checks": {"slopes_at_least_one": _check(ok)}}


def run_t_sweep(cfg: ExperimentConfig, threads: Optional[int] = None) -> ExperimentRecord:
    """Reduced chemical-distance runs across the ``T``-grid."""
    if max(cfg.targets) > cfg.N:
        raise ValueError("targets must lie in [0, N]")
    t0 = time.time()
    rows = _tsweep_rows(cfg, threads)
    rec = ExperimentRecord(cfg, rows, aggregate(cfg, rows))
    rec.provenance = _provenance(cfg, None, time.time() - t0)
    return rec


# -- common ------------------------------------------------------------------------

AGGREGATORS = {
    "chemdist": _chemdist_aggregate,
    "shape": _shape_aggregate,
    "uniqueness": _uniqueness_aggregate,
    "crossing": _crossing_aggregate,
    "qip": _qip_aggregate,
    "validate": _validate_aggregate,
    "t_sweep": _tsweep_aggregate,
}

RUNNERS = {
    "chemdist": run_chemical_distance,
    "shape": run_shape,
    "uniqueness": run_local_uniqueness,
    "crossing": run_crossing,
    "qip": run_qip,
    "validate": run_model_validation,
    "t_sweep": run_t_sweep,
}


def aggregate(cfg: ExperimentConfig, rows: list) -> dict:
    """Aggregates of ``rows``; what every runner stores."""
    return AGGREGATORS[cfg.kind](cfg, rows)


def _provenance(cfg, margin, elapsed) -> dict:
    return {"version": __version__, "backend": K.BACKEND, "seed": cfg.seed,
            "margin": margin, "wall_clock_s": elapsed}


def _record(cfg: ExperimentConfig, margin: int, rows: list) -> ExperimentRecord:
    return ExperimentRecord(cfg, rows, aggregate(cfg, rows), _provenance(cfg, margin, None))


def run(cfg: ExperimentConfig, threads: Optional[int] = None) -> ExperimentRecord:
    t0 = time.time()
    rec = RUNNERS[cfg.kind](cfg, threads)
    rec.provenance["wall_clock_s"] = time.time() - t0
    return rec
