"""Lattice potential theory: Green's functions, equilibrium measures, capacities.

The Green's function of the simple random walk with per-step survival ``s``,

    G_s(x) = sum_j s^j P_0(X_j = x),

is evaluated through the continuous-time representation

    G_s(x) = int_0^inf exp(-(1 - s) t) prod_j ive(|x_j|, s t / d) dt,

where ``ive`` is the exponentially scaled modified Bessel function. For
``s = 1`` the integrand decays like ``t^{-d/2}`` and the far tail is added in
closed form from the large-argument expansion of ``ive``.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

import numpy as np
import scipy.linalg
from scipy import special

from . import _kernels as K
from .lattice import Box, Site, as_site
from .rng import Stream, as_stream
from .walk import Estimate, binomial_estimate

DEFAULT_TOL = 1e-10
MAX_EQUILIBRIUM_SIZE = 4096

_GL_NODES = 24
_MAX_REFINE = 6
_TAIL_TERMS = 8


class QuadratureError(RuntimeError):
    """Requested tolerance not reached within the node budget."""


class IllConditioned(np.linalg.LinAlgError):
    def __init__(self, msg: str, condition: float):
        super().__init__(msg)
        self.condition = condition


def canonical(offset) -> tuple[int, ...]:
    """Representative of ``offset`` under sign flips and coordinate swaps."""
    return tuple(sorted(abs(int(c)) for c in offset))


def _check_args(d: int, s: float):
    if not 0 < s <= 1:
        raise ValueError(f"survival must lie in (0, 1], got {s}")
    if s == 1 and d < 3:
        raise ValueError("the free Green's function diverges for d < 3")


def _panels(t_end: float, splits: int) -> np.ndarray:
    edges = [0.0, 0.5]
    while edges[-1] < t_end:
        edges.append(min(2 * edges[-1], t_end))
    edges = np.asarray(edges)
    for _ in range(splits):
        mid = 0.5 * (edges[:-1] + edges[1:])
        edges = np.sort(np.concatenate([edges, mid]))
    return edges


def _integrate(ns: np.ndarray, d: int, s: float, t_end: float, splits: int) -> np.ndarray:
    x, w = np.polynomial.legendre.leggauss(_GL_NODES)
    edges = _panels(t_end, splits)
    a, b = edges[:-1, None], edges[1:, None]
    t = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
    wt = (0.5 * (b - a) * w).ravel()
    f = np.exp(-(1.0 - s) * t) * np.ones((len(ns), 1))
    z = (s / d) * t
    for j in range(d):
        f *= special.ive(ns[:, j : j + 1], z[None, :])
    # row sums rather than a BLAS product, so a row does not depend on its batch
    return (f * wt).sum(axis=1)


def _tail(ns: np.ndarray, d: int, s: float, M: float) -> np.ndarray:
    """Closed-form ``int_M^inf prod_j ive(n_j, a t) dt`` for ``s = 1``."""
    a = s / d
    mu = 4.0 * ns.astype(float) ** 2
    # per-coordinate series coefficients of sqrt(2 pi a t) ive(n, a t) in 1/t
    coef = np.ones(ns.shape + (_TAIL_TERMS + 1,))
    for k in range(1, _TAIL_TERMS + 1):
        coef[..., k] = -coef[..., k - 1] * (mu - (2 * k - 1) ** 2) / (8.0 * k * a)
    prod = coef[:, 0, :]
    for j in range(1, d):
        nxt = np.zeros_like(prod)
        for k in range(_TAIL_TERMS + 1):
            nxt[:, k:] += prod[:, k : k + 1] * coef[:, j, : _TAIL_TERMS + 1 - k]
        prod = nxt
    k = np.arange(_TAIL_TERMS + 1)
    p = d / 2 + k - 1
    return (2 * math.pi * a) ** (-d / 2) * (prod * (M ** (-p) / p)).sum(axis=1)


def _green_raw(ns: np.ndarray, d: int, s: float, tol: float) -> np.ndarray:
    """Quadrature per offset; each value depends on its own offset only."""
    if s < 1:
        t_ends = np.full(len(ns), 45.0 / (1.0 - s))
    else:
        z1 = np.maximum(400.0, 40.0 * (4.0 * ns.astype(float) ** 2).max(axis=1, initial=0.0))
        t_ends = z1 * d / s
    out = np.empty(len(ns))
    for t_end in np.unique(t_ends):
        rows = np.nonzero(t_ends == t_end)[0]
        sub = ns[rows]
        tail = _tail(sub, d, s, t_end) if s == 1 else np.zeros(len(rows))
        prev = _integrate(sub, d, s, t_end, 0)
        todo = np.arange(len(rows))
        for splits in range(1, _MAX_REFINE + 1):
            cur = _integrate(sub[todo], d, s, t_end, splits)
            done = np.abs(cur - prev[todo]) <= 0.1 * tol
            out[rows[todo[done]]] = cur[done] + tail[todo[done]]
            prev[todo] = cur
            todo = todo[~done]
            if len(todo) == 0:
                break
        else:
            raise QuadratureError(f"tolerance {tol} not reached")
    return out


def outside_visit_mass(w: int, r: int, s: float, d: int) -> float:
    """``sum_{x outside B(w+r)} sum_{y in B(w)} G_s(x - y)``.

    The expected number of visits to ``B(w)`` by one killed walk from each
    site outside ``B(w + r)``. The sum factorizes over axes inside the
    integral representation: per axis, ``g(t)`` is the Bessel-weighted
    fraction of offsets that carry the walk out of the padded range.
    """
    if not 0 < s < 1:
        raise ValueError("needs killing, 0 < s < 1")
    side = 2 * w + 1
    nmax = side + r
    n = np.arange(-nmax + 1, nmax)
    miss = np.clip(np.abs(n) - r, 0, side) / side
    t_end = 45.0 / (1.0 - s)
    x, wts = np.polynomial.legendre.leggauss(_GL_NODES)
    prev = None
    for splits in range(_MAX_REFINE + 1):
        edges = _panels(t_end, splits)
        a, b = edges[:-1, None], edges[1:, None]
        t = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
        wt = (0.5 * (b - a) * wts).ravel()
        iv = special.ive(np.abs(n)[:, None], (s / d) * t[None, :])
        g = miss @ iv + np.maximum(0.0, 1.0 - iv.sum(axis=0))
        f = np.exp(-(1.0 - s) * t) * -np.expm1(d * np.log1p(-np.minimum(g, 1.0)))
        cur = side ** d * float(f @ wt)
        # absolute floor: rounding in g is ~1e-16 per unit of window volume and time
        if prev is not None and abs(cur - prev) <= 1e-6 * cur + 1e-12 * side ** d / (1.0 - s):
            return cur
        prev = cur
    raise QuadratureError("outside visit mass did not converge")


_cache: dict = {}
_lock = threading.Lock()


def green_many(offsets, d: int, s: float = 1.0, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Vectorized :func:`green` over an ``(m, d)`` array of offsets."""
    _check_args(d, s)
    offs = np.atleast_2d(np.asarray(offsets, dtype=np.int64))
    if offs.shape[1] != d:
        raise ValueError(f"offsets must have {d} columns")
    canon = np.sort(np.abs(offs), axis=1)
    uniq, inv = np.unique(canon, axis=0, return_inverse=True)
    keys = [(d, float(s), float(tol), tuple(int(c) for c in row)) for row in uniq]
    with _lock:
        vals = np.array([_cache.get(k, np.nan) for k in keys])
    missing = np.isnan(vals)
    if missing.any():
        vals[missing] = _green_raw(uniq[missing], d, s, tol)
        with _lock:
            for k, v in zip((k for k, m in zip(keys, missing) if m), vals[missing]):
                _cache[k] = float(v)
    return vals[np.ravel(inv)]


def green(offset: Site, d: Optional[int] = None, s: float = 1.0, tol: float = DEFAULT_TOL) -> float:
    """Expected number of visits to ``offset`` by a walk from the origin
    surviving each step with probability ``s``.

    Parameters
    ----------
    offset : Site
        Target relative to the start.
    d : int, optional
        Dimension; defaults to ``len(offset)``.
    s : float
        Per-step survival, ``T/(T+1)`` for the killed walk and 1 for none.
    tol : float
        Absolute quadrature tolerance.
    """
    d = len(offset) if d is None else d
    return float(green_many([offset], d, s, tol)[0])


def clear_cache():
    with _lock:
        _cache.clear()


@dataclass
class GreenTable:
    """Green's function values on a set of canonical offsets."""

    d: int
    s: float = 1.0
    tol: float = DEFAULT_TOL
    values: dict = field(default_factory=dict)

    @classmethod
    def compute(cls, offsets: Iterable[Site], d: int, s: float = 1.0,
                tol: float = DEFAULT_TOL) -> "GreenTable":
        canon = sorted({canonical(o) for o in offsets})
        vals = green_many(canon, d, s, tol) if canon else []
        return cls(d, s, tol, dict(zip(canon, map(float, vals))))

    def __getitem__(self, offset) -> float:
        return self.values[canonical(offset)]

    def to_text(self) -> str:
        lines = [f"# d={self.d} s={self.s!r} tol={self.tol!r}"]
        for off, v in sorted(self.values.items()):
            lines.append(" ".join(map(str, off)) + f" {v!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "GreenTable":
        rows = text.strip().splitlines()
        head = dict(item.split("=") for item in rows[0].lstrip("#").split())
        d = int(head["d"])
        values = {}
        for line in rows[1:]:
            parts = line.split()
            if len(parts) != d + 1:
                raise ValueError(f"bad row: {line!r}")
            values[tuple(int(p) for p in parts[:d])] = float(parts[d])
        return cls(d, float(head["s"]), float(head["tol"]), values)


@dataclass(frozen=True)
class EquilibriumMeasure:
    """Equilibrium measure of ``sites`` for the walk with survival ``s``."""

    sites: tuple
    weights: np.ndarray
    condition: float
    s: float = 1.0

    @property
    def capacity(self) -> float:
        return float(self.weights.sum())

    def as_dict(self) -> dict:
        return dict(zip(self.sites, map(float, self.weights)))


def green_matrix(sites: np.ndarray, d: int, s: float = 1.0, tol: float = DEFAULT_TOL) -> np.ndarray:
    pts = np.asarray(sites, dtype=np.int64)
    n = len(pts)
    iu = np.triu_indices(n)
    vals = green_many(pts[iu[0]] - pts[iu[1]], d, s, tol)
    G = np.empty((n, n))
    G[iu] = vals
    G[iu[1], iu[0]] = vals
    return G


def equilibrium_solve(K_sites: Iterable[Site], d: Optional[int] = None, s: float = 1.0,
                      tol: float = DEFAULT_TOL, max_size: int = MAX_EQUILIBRIUM_SIZE,
                      max_condition: float = 1e12) -> EquilibriumMeasure:
    """Solve ``G_s w = 1`` on ``K``; ``w`` is the equilibrium measure and its
    total mass the capacity (``cap`` for ``s = 1``, ``cap^(T)`` for
    ``s = T/(T+1)``).

    Raises
    ------
    ValueError
        If ``K`` is empty or larger than ``max_size``.
    IllConditioned
        If the reciprocal condition estimate is below ``1/max_condition``.
    """
    sites = tuple(sorted({as_site(x) for x in K_sites}))
    if not sites:
        raise ValueError("K must be non-empty")
    if len(sites) > max_size:
        raise ValueError(f"|K| = {len(sites)} exceeds the cap {max_size}")
    d = len(sites[0]) if d is None else d
    G = green_matrix(np.asarray(sites), d, s, tol)
    lu, piv = scipy.linalg.lu_factor(G, check_finite=False)
    anorm = np.abs(G).sum(axis=0).max()
    rcond, _ = scipy.linalg.lapack.dgecon(lu, anorm, norm="1")
    cond = math.inf if rcond == 0 else 1.0 / rcond
    if cond > max_condition:
        raise IllConditioned(f"condition estimate {cond:.3g}", cond)
    w = scipy.linalg.lu_solve((lu, piv), np.ones(len(sites)), check_finite=False)
    return EquilibriumMeasure(sites, w, cond, s)


def capacity(K_sites, d: Optional[int] = None, s: float = 1.0, tol: float = DEFAULT_TOL) -> float:
    return equilibrium_solve(K_sites, d, s, tol).capacity


def ball_capacity(R: int, d: int, s: float = 1.0, tol: float = DEFAULT_TOL) -> float:
    """Capacity of ``B(R)``.

    Without killing the equilibrium measure lives on the internal boundary,
    so only that is solved. The measure is also constant on orbits of the
    signed permutations, which leaves one unknown per orbit.
    """
    b = Box.origin(d, R)
    pts = b.sites()
    if s == 1:
        pts = pts[np.abs(pts).max(axis=1) == R]
    canon = np.sort(np.abs(pts), axis=1)
    reps, orbit = np.unique(canon, axis=0, return_inverse=True)
    orbit = np.ravel(orbit)
    m = len(reps)
    if m > MAX_EQUILIBRIUM_SIZE:
        raise ValueError(f"{m} orbits exceed the cap {MAX_EQUILIBRIUM_SIZE}")
    M = np.zeros((m, m))
    for i, x in enumerate(reps):
        g = green_many(pts - x, d, s, tol)
        M[i] = np.bincount(orbit, weights=g, minlength=m)
    w = np.linalg.solve(M, np.ones(m))
    return float(w @ np.bincount(orbit, minlength=m))


@dataclass(frozen=True)
class ScalingFit:
    radii: tuple
    capacities: tuple
    exponent: float
    exponent_stderr: float
    prefactor: float
    c1: float
    c2: float


def ball_capacity_scaling(d: int, radii, s: float = 1.0, tol: float = DEFAULT_TOL) -> ScalingFit:
    """Least-squares fit of ``log cap(B(R))`` against ``log R``.

    ``c1`` and ``c2`` are the smallest and largest of ``cap(B(R)) / R^(d-2)``.
    """
    radii = tuple(int(r) for r in radii)
    if len(set(radii)) < 3:
        raise ValueError("need at least 3 distinct radii")
    if min(radii) < 1:
        raise ValueError("radii must be at least 1")
    caps = tuple(ball_capacity(r, d, s, tol) for r in radii)
    x, y = np.log(radii), np.log(caps)
    (slope, icpt), cov = np.polyfit(x, y, 1, cov="unscaled")
    resid = y - (slope * x + icpt)
    sigma2 = float(resid @ resid) / (len(radii) - 2)
    ratios = np.asarray(caps) / np.asarray(radii, dtype=float) ** (d - 2)
    return ScalingFit(radii, caps, float(slope), math.sqrt(sigma2 * cov[0, 0]),
                      float(math.exp(icpt)), float(ratios.min()), float(ratios.max()))


@dataclass(frozen=True)
class HitRateReport:
    probability: Estimate
    capacity: float
    scale: float
    method: str

    @property
    def ratio(self) -> float:
        """``P_y(H_A < T) / (T^{(2-d)/2} cap(A))``."""
        return self.probability.value / self.scale if self.scale > 0 else math.nan


def annulus_starts(d: int, r_in: int, r_out: int, n: int, gen: np.random.Generator) -> np.ndarray:
    """``n`` uniform sites of ``B(r_out) minus B(r_in - 1)``, i.e. l-infinity norm in ``[r_in, r_out]``."""
    out = np.empty((0, d), dtype=np.int64)
    while len(out) < n:
        pts = gen.integers(-r_out, r_out + 1, size=(2 * (n - len(out)) + 16, d))
        keep = np.abs(pts).max(axis=1) >= r_in
        out = np.concatenate([out, pts[keep]])
    return out[:n]


def hit_probability_exact(A: set, y_sites: np.ndarray, T: int, max_cells: int = 2 * 10 ** 7) -> np.ndarray:
    """``P_y(H_A < T)`` for each row of ``y_sites`` by backward recursion.

    ``h_t(x)`` is the chance of visiting ``A`` at one of times ``0..t-1``.
    The grid is large enough that no path relevant before time ``T`` can
    reach its edge.
    """
    pts = np.asarray(sorted(A), dtype=np.int64)
    y = np.asarray(y_sites, dtype=np.int64)
    d = pts.shape[1]
    a_rad = int(np.abs(pts).max())
    y_rad = int(np.abs(y).max())
    # a path leaving radius R and still reaching A by time T needs
    # (R - y_rad) + (R - a_rad) <= T
    R = min((T + y_rad + a_rad) // 2 + 1, max(y_rad, a_rad) + T)
    if (2 * R + 3) ** d > max_cells:
        raise ValueError(f"grid of radius {R} exceeds {max_cells} cells")
    n = 2 * R + 3
    amask = np.zeros((n,) * d, dtype=bool)
    amask[tuple((pts + R + 1).T)] = True
    h = amask.astype(float)
    inner = (slice(1, -1),) * d
    for _ in range(T - 1):
        nxt = np.zeros_like(h)
        acc = nxt[inner]
        for ax in range(d):
            lo = tuple(slice(0, -2) if i == ax else slice(1, -1) for i in range(d))
            hi = tuple(slice(2, None) if i == ax else slice(1, -1) for i in range(d))
            acc += h[lo]
            acc += h[hi]
        acc /= 2 * d
        nxt[amask] = 1.0
        h = nxt
    return h[tuple((y + R + 1).T)] if T > 0 else np.zeros(len(y))


def hit_rate_check(A, T: int, d: int, replicas: int, rng: Union[Stream, int],
                   annulus: tuple = (6.0, 8.0), method: str = "mc",
                   tol: float = DEFAULT_TOL) -> HitRateReport:
    """Estimate ``P_y(H_A < T)`` for ``y`` uniform on an annulus around the origin.

    Parameters
    ----------
    A : set of Site
        Target set inside ``B(1.5 sqrt(T))``.
    annulus : (float, float)
        Inner and outer radii in units of ``sqrt(T)``.
    method : {"mc", "exact"}
        ``"mc"`` runs one walk per replica. ``"exact"`` averages the exact
        hitting probability over the sampled starts, which is the only
        usable route from the default annulus, where hits are far too rare
        to observe.
    """
    A = {as_site(a) for a in A}
    rt = math.sqrt(T)
    if any(len(a) != d for a in A):
        raise ValueError("dimension mismatch")
    if any(max(map(abs, a)) > 1.5 * rt for a in A):
        raise ValueError("A must lie in B(1.5 sqrt(T))")
    r_in, r_out = math.ceil(annulus[0] * rt), math.floor(annulus[1] * rt)
    if r_in > r_out:
        raise ValueError("empty annulus")
    if replicas <= 0:
        raise ValueError("replicas must be positive")
    scale = T ** ((2 - d) / 2)
    if not A:
        return HitRateReport(Estimate(0.0, 0.0, replicas), 0.0, 0.0, method)
    cap = capacity(A, d, 1.0, tol)
    st = as_stream(rng)
    gen = np.random.Generator(np.random.PCG64(st.child(1).key))
    y = annulus_starts(d, r_in, r_out, replicas, gen)
    if method == "mc":
        pts = np.asarray(sorted(A), dtype=np.int64)
        lo = pts.min(axis=0)
        shape = tuple(int(v) for v in pts.max(axis=0) - lo + 1)
        mask = np.zeros(shape, dtype=np.uint8)
        mask[tuple((pts - lo).T)] = 1
        hits = K.hit_within(mask, lo, shape, np.ascontiguousarray(y), int(T), st.child(2).key)
        est = binomial_estimate(int(np.sum(hits)), replicas)
    elif method == "exact":
        p = hit_probability_exact(A, y, int(T))
        sd = float(p.std(ddof=1)) if replicas > 1 else 0.0
        est = Estimate(float(p.mean()), sd / math.sqrt(replicas), replicas)
    else:
        raise ValueError(f"unknown method {method!r}")
    return HitRateReport(est, cap, scale * cap, method)
