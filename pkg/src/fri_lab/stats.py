"""Estimators, goodness-of-fit tests, regression and shape metrics."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy import stats as sps
from scipy.spatial import cKDTree

DEFAULT_ALPHA = 0.01


@dataclass(frozen=True)
class SummaryStats:
    n: int
    mean: float
    stderr: float
    std: float = 0.0
    quantiles: tuple = ()

    def quantile(self, p: float) -> float:
        for q, v in self.quantiles:
            if q == p:
                return v
        raise KeyError(p)

    def to_dict(self) -> dict:
        return {"n": self.n, "mean": self.mean, "stderr": self.stderr, "std": self.std,
                "quantiles": [list(q) for q in self.quantiles]}


def summarize(values, quantiles: Sequence[float] = (0.01, 0.5, 0.99)) -> SummaryStats:
    """Mean, standard error and quantiles of the finite entries of ``values``."""
    x = np.asarray(values, dtype=float)
    x = x[np.isfinite(x)]
    n = len(x)
    if n == 0:
        return SummaryStats(0, math.nan, math.nan, math.nan, ())
    std = float(x.std(ddof=1)) if n > 1 else 0.0
    qs = tuple((float(p), float(np.quantile(x, p))) for p in sorted(quantiles))
    return SummaryStats(n, float(x.mean()), std / math.sqrt(n), std, qs)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    reject_at: float = DEFAULT_ALPHA
    dof: Optional[int] = None
    detail: dict = field(default_factory=dict, compare=False)

    # keep pytest from collecting this class
    __test__ = False

    @property
    def rejected(self) -> bool:
        return self.p_value < self.reject_at

    @property
    def passed(self) -> bool:
        return not self.rejected

    def to_dict(self) -> dict:
        out = {"statistic": self.statistic, "p_value": self.p_value,
               "reject_at": self.reject_at, "dof": self.dof, "passed": self.passed}
        if "error" in self.detail:
            out["error"] = self.detail["error"]
        return out


def _merge_bins(obs: np.ndarray, exp: np.ndarray, min_expected: float):
    """Merge adjacent bins left to right until each expects ``min_expected``;
    a short remainder joins the last bin."""
    mo, me = [], []
    co = ce = 0.0
    for o, e in zip(obs, exp):
        co += o
        ce += e
        if ce >= min_expected:
            mo.append(co)
            me.append(ce)
            co = ce = 0.0
    if ce > 0 or co > 0:
        if me:
            mo[-1] += co
            me[-1] += ce
        else:
            mo.append(co)
            me.append(ce)
    return np.asarray(mo), np.asarray(me)


def chi_square_gof(observed, probs, alpha: float = DEFAULT_ALPHA, min_expected: float = 5.0,
                   n_params: int = 0) -> TestResult:
    """Pearson chi-square test of bin counts against bin probabilities.

    ``probs`` must cover the whole support (sum to 1); adjacent bins are merged
    so that every expected count is at least ``min_expected``.
    """
    obs = np.asarray(observed, dtype=float)
    p = np.asarray(probs, dtype=float)
    n = obs.sum()
    mo, me = _merge_bins(obs, n * p, min_expected)
    dof = len(mo) - 1 - n_params
    if dof < 1:
        raise ValueError("too few bins after merging")
    stat = float(np.sum((mo - me) ** 2 / me))
    return TestResult(stat, float(sps.chi2.sf(stat, dof)), alpha, dof,
                      {"observed": mo.tolist(), "expected": me.tolist()})


def histogram(samples) -> np.ndarray:
    """Counts of each value ``0..max`` in a sample of non-negative integers."""
    x = np.asarray(samples, dtype=np.int64)
    if x.size and x.min() < 0:
        raise ValueError("samples must be non-negative")
    return np.bincount(x) if x.size else np.zeros(1, dtype=np.int64)


def poisson_gof(counts, lam: float, alpha: float = DEFAULT_ALPHA) -> TestResult:
    """Chi-square test that a histogram ``counts[k] = #{samples equal to k}``
    is Poisson(``lam``). The last bin absorbs the upper tail."""
    h = np.asarray(counts, dtype=float)
    if h.sum() < 50:
        raise ValueError("need at least 50 observations")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    kmax = max(len(h) - 1, int(lam + 10 * math.sqrt(lam) + 10))
    h = np.concatenate([h, np.zeros(kmax + 1 - len(h))])
    pk = sps.poisson.pmf(np.arange(kmax + 1), lam)
    pk[-1] += sps.poisson.sf(kmax, lam)
    return chi_square_gof(h, pk, alpha)


def geometric_gof(lengths, T: float, alpha: float = DEFAULT_ALPHA) -> TestResult:
    """Chi-square test that lengths follow ``P(L=k) = (1-s) s^k`` with ``s = T/(T+1)``."""
    h = histogram(lengths).astype(float)
    if h.sum() < 50:
        raise ValueError("need at least 50 observations")
    s = T / (T + 1.0)
    kmax = len(h) - 1
    pk = (1 - s) * s ** np.arange(kmax + 1)
    pk[-1] = s ** kmax
    return chi_square_gof(h, pk, alpha)


def welch_test(a, b, alpha: float = DEFAULT_ALPHA) -> TestResult:
    """Two-sample Welch t-test for equal means."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least 2 values")
    if a.var() == 0 and b.var() == 0:
        same = a.mean() == b.mean()
        return TestResult(0.0 if same else math.inf, 1.0 if same else 0.0, alpha)
    r = sps.ttest_ind(a, b, equal_var=False)
    return TestResult(float(r.statistic), float(r.pvalue), alpha)


def two_proportion_test(k1: int, n1: int, k2: int, n2: int, alpha: float = DEFAULT_ALPHA) -> TestResult:
    """Pooled two-proportion z-test."""
    p = (k1 + k2) / (n1 + n2)
    se = math.sqrt(p * (1 - p) * (1 / n1 + 1 / n2))
    if se == 0:
        return TestResult(0.0, 1.0, alpha)
    z = (k1 / n1 - k2 / n2) / se
    return TestResult(z, float(2 * sps.norm.sf(abs(z))), alpha)


def bonferroni(results: Sequence[TestResult], alpha: float = DEFAULT_ALPHA) -> list[TestResult]:
    """Re-level each test at ``alpha / m``."""
    m = max(len(results), 1)
    return [TestResult(r.statistic, r.p_value, alpha / m, r.dof, r.detail) for r in results]


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r2: float
    slope_stderr: float
    intercept_stderr: float
    n: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def linear_fit(xs, ys) -> LinearFit:
    """Ordinary least squares ``y = slope * x + intercept``."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if len(x) != len(y):
        raise ValueError("xs and ys differ in length")
    if len(x) < 2 or np.all(x == x[0]):
        raise ValueError("need at least two distinct xs")
    n = len(x)
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    slope = float(((x - xm) * (y - ym)).sum()) / sxx
    icpt = ym - slope * xm
    resid = y - (slope * x + icpt)
    sse = float(resid @ resid)
    syy = float(((y - ym) ** 2).sum())
    r2 = 1.0 if syy == 0 else 1.0 - sse / syy
    if n > 2:
        s2 = sse / (n - 2)
        se_slope = math.sqrt(s2 / sxx)
        se_icpt = math.sqrt(s2 * (1 / n + xm * xm / sxx))
    else:
        se_slope = se_icpt = math.nan
    return LinearFit(slope, float(icpt), r2, se_slope, se_icpt, n)


def slope_test(fit: LinearFit, alpha: float = DEFAULT_ALPHA) -> TestResult:
    """One-sided t-test of ``slope > 0``."""
    if not fit.slope_stderr > 0:
        return TestResult(math.inf if fit.slope > 0 else -math.inf,
                          0.0 if fit.slope > 0 else 1.0, alpha, fit.n - 2)
    t = fit.slope / fit.slope_stderr
    return TestResult(t, float(sps.t.sf(t, fit.n - 2)), alpha, fit.n - 2)


def _points(A) -> np.ndarray:
    pts = np.asarray([tuple(a) for a in A] if not isinstance(A, np.ndarray) else A, dtype=float)
    if pts.size == 0:
        raise ValueError("empty point set")
    return pts.reshape(len(pts), -1)


def directed_hausdorff(A, B) -> float:
    """``max_{a in A} min_{b in B} |a - b|_inf``."""
    a, b = _points(A), _points(B)
    dist, _ = cKDTree(b).query(a, p=np.inf)
    return float(dist.max())


def hausdorff(A, B) -> float:
    """l-infinity Hausdorff distance between two finite point sets."""
    return max(directed_hausdorff(A, B), directed_hausdorff(B, A))


def _directed_grid(a: np.ndarray, b: np.ndarray) -> int:
    lo = np.minimum(a.min(axis=0), b.min(axis=0))
    hi = np.maximum(a.max(axis=0), b.max(axis=0))
    free = np.ones(tuple(int(x) for x in hi - lo + 1), dtype=bool)
    free[tuple((b - lo).T)] = False
    dt = ndimage.distance_transform_cdt(free, metric="chessboard")
    return int(dt[tuple((a - lo).T)].max())


def lattice_hausdorff(A, n: int, B, m: int) -> float:
    """``hausdorff(A/n, B/m)`` for integer point sets, via chessboard distance
    transforms on the common grid of spacing ``1/lcm(n, m)``."""
    a = np.asarray(A, dtype=np.int64)
    b = np.asarray(B, dtype=np.int64)
    if a.size == 0 or b.size == 0:
        raise ValueError("empty point set")
    L = math.lcm(int(n), int(m))
    a = a * (L // n)
    b = b * (L // m)
    return max(_directed_grid(a, b), _directed_grid(b, a)) / L


def signed_permutations(d: int) -> np.ndarray:
    """All ``2^d d!`` signed permutation matrices, shape ``(m, d, d)``."""
    out = []
    for perm in itertools.permutations(range(d)):
        for signs in itertools.product((-1, 1), repeat=d):
            m = np.zeros((d, d))
            m[np.arange(d), perm] = signs
            out.append(m)
    return np.asarray(out)


def symmetrize(A) -> np.ndarray:
    """Union of the images of ``A`` under all signed permutations."""
    pts = _points(A)
    imgs = np.einsum("gij,nj->gni", signed_permutations(pts.shape[1]), pts)
    return np.unique(imgs.reshape(-1, pts.shape[1]), axis=0)


def linf_diameter(A) -> float:
    pts = _points(A)
    return float((pts.max(axis=0) - pts.min(axis=0)).max())


def symmetry_score(A, d: Optional[int] = None) -> float:
    """``1 - hausdorff(A, sym(A)) / diameter(A)`` clipped to ``[0, 1]``.

    A single point has zero diameter; it scores 1 only if it is fixed by the
    group (the origin).
    """
    pts = _points(A)
    if d is not None and pts.shape[1] != d:
        raise ValueError("dimension mismatch")
    h = hausdorff(pts, symmetrize(pts))
    diam = linf_diameter(pts)
    if diam == 0:
        return 1.0 if h == 0 else 0.0
    return float(min(1.0, max(0.0, 1.0 - h / diam)))


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if not 0 <= successes <= trials:
        raise ValueError("successes out of range")
    z = float(sps.norm.ppf(0.5 + confidence / 2))
    p = successes / trials
    den = 1 + z * z / trials
    mid = (p + z * z / (2 * trials)) / den
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / den
    lo, hi = mid - half, mid + half
    if successes == 0:
        lo = 0.0
    if successes == trials:
        hi = 1.0
    return max(0.0, lo), min(1.0, hi)


def intervals_overlap(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


def nonincreasing_within_ci(intervals: Sequence[tuple[float, float]]) -> bool:
    """Each later interval lies below or overlaps each earlier one."""
    return all(intervals[j][0] <= intervals[i][1]
               for i in range(len(intervals)) for j in range(i + 1, len(intervals)))


def nondecreasing_within_ci(intervals: Sequence[tuple[float, float]]) -> bool:
    return all(intervals[j][1] >= intervals[i][0]
               for i in range(len(intervals)) for j in range(i + 1, len(intervals)))


def cluster_robust_mean(values, groups) -> tuple[float, float]:
    """Mean of ``values`` and its standard error with observations sharing a
    group label treated as one correlated cluster."""
    v = np.asarray(values, dtype=float)
    g = np.asarray(groups)
    n = len(v)
    mean = float(v.mean())
    _, inv = np.unique(g, return_inverse=True)
    sums = np.bincount(np.ravel(inv), weights=v - mean)
    G = len(sums)
    if G < 2:
        return mean, math.nan
    var = float((sums ** 2).sum()) * G / (G - 1) / n ** 2
    return mean, math.sqrt(var)
