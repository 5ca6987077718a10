"""Finitary random interlacements restricted to a padded observation window.

Every site ``x`` of the padded box carries ``N_x ~ Poisson(2du/(T+1))``
independent killed walks started at ``x``. Randomness is keyed by absolute
site coordinates, so one seed defines a single infinite-volume realization
and any window/margin choice observes a restriction of it: enlarging the
margin only adds trajectories.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels as K
from .cluster import BondConfig
from .lattice import Box, Site, as_site, linf_distance, shell_count
from .rng import derive
from .walk import KillParams, Trajectory

DEFAULT_STEP_CAP = 10**9

# stream-path tags below the master seed
_DIRECT = 0
_THIN = 1


class SampleTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class FriParams:
    u: float
    T: float
    d: int = 3

    def __post_init__(self):
        if not self.u > 0:
            raise ValueError("u must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.d < 3:
            raise ValueError("d must be at least 3")

    @property
    def site_rate(self) -> float:
        """Mean number of trajectories started per site, ``2du/(T+1)``."""
        return 2 * self.d * self.u / (self.T + 1)

    @property
    def kill(self) -> KillParams:
        return KillParams(self.T)

    def scaled(self, w: float) -> "FriParams":
        return FriParams(self.u * w, self.T, self.d)


def process_key(seed: int, *path: int) -> int:
    return derive(seed, *path) if path else derive(seed, _DIRECT)


def _kernel_args(p: FriParams, u_ref: Optional[float]):
    if u_ref is None:
        u_ref = p.u
    if u_ref < p.u:
        raise ValueError("u_ref must be at least u")
    lam = 2 * p.d * u_ref / (p.T + 1)
    return lam, p.u / u_ref, p.kill.survival


def expected_steps(p: FriParams, padded: Box) -> float:
    return p.site_rate * padded.volume * (p.T + 1)


def _guard(p: FriParams, padded: Box, cap: float, streaming: bool = False):
    # stored samples hold every position; streamed ones only visit each site
    need = padded.volume if streaming else expected_steps(p, padded)
    if need > cap:
        what = "padded sites" if streaming else "walk positions"
        raise SampleTooLarge(
            f"expected {need:.3g} {what} exceeds cap {cap:.3g}; "
            "shrink the window or margin, or raise the cap")


@dataclass(eq=False)
class FriSample:
    """All trajectories started in ``window`` padded by ``margin``.

    Trajectories are stored flat: ``starts[i]``, ``lengths[i]`` and the
    direction bytes ``dirs[offsets[i]:offsets[i+1]]``.
    """

    params: FriParams
    window: Box
    margin: int
    seed: int
    starts: np.ndarray
    lengths: np.ndarray
    dirs: np.ndarray = field(repr=False)
    key: int = 0

    def __post_init__(self):
        self.offsets = np.concatenate([[0], np.cumsum(self.lengths)]).astype(np.int64)

    @property
    def padded(self) -> Box:
        return self.window.padded(self.margin)

    def __len__(self):
        return len(self.lengths)

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(as_site(self.starts[i]), self.dirs[self.offsets[i]:self.offsets[i + 1]])

    @property
    def trajectories(self) -> list[Trajectory]:
        return [self.trajectory(i) for i in range(len(self))]

    def site_counts(self) -> np.ndarray:
        """Number of trajectories started at each padded-box site."""
        idx = self.padded.indices(self.starts) if len(self) else np.empty(0, dtype=np.int64)
        return np.bincount(idx, minlength=self.padded.volume)

    def first_hits(self, A) -> np.ndarray:
        """Index of each trajectory's first visit to ``A`` (-1 if none)."""
        mask, lo = site_mask(A)
        return K.first_hits(self.starts, self.lengths, self.dirs, mask, lo, mask.shape)

    def intersecting(self, region: Box) -> np.ndarray:
        """Boolean selector of trajectories that visit ``region``: the
        restriction-by-intersection view of the sample."""
        mask = np.ones(region.shape, dtype=np.uint8)
        hits = K.first_hits(self.starts, self.lengths, self.dirs, mask, region.lo, region.shape)
        return hits >= 0

    def save(self, path) -> None:
        Path(path).write_bytes(encode_sample(self))

    @classmethod
    def load(cls, path) -> "FriSample":
        return decode_sample(Path(path).read_bytes())


def site_mask(A):
    """Dense 0/1 mask of a site set over its bounding box: ``(mask, lo)``."""
    pts = np.asarray([as_site(s) for s in A], dtype=np.int64)
    if len(pts) == 0:
        raise ValueError("empty site set")
    lo = pts.min(axis=0)
    shape = tuple(int(x) for x in pts.max(axis=0) - lo + 1)
    mask = np.zeros(shape, dtype=np.uint8)
    mask[tuple((pts - lo).T)] = 1
    return mask, lo


def sample_window(p: FriParams, window: Box, margin: int, rng: int, *,
                  u_ref: Optional[float] = None, step_cap: float = DEFAULT_STEP_CAP,
                  key: Optional[int] = None) -> FriSample:
    """Sample and store every trajectory started in ``window`` padded by ``margin``.

    With ``u_ref > u`` the count per site is drawn at intensity ``u_ref`` and
    each trajectory is kept with probability ``u/u_ref``; samples sharing a
    seed and ``u_ref`` are then monotonically coupled in ``u``.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    if window.d != p.d:
        raise ValueError("window dimension does not match params")
    padded = window.padded(margin)
    _guard(p, padded, step_cap)
    key = process_key(rng) if key is None else key
    lam, keep, s = _kernel_args(p, u_ref)
    starts, lengths, dirs = K.sample_trajectories(key, padded.lo, padded.shape, lam, keep, s)
    return FriSample(p, window, margin, int(rng), starts, lengths, dirs, key)


def sample_bonds(p: FriParams, window: Box, margin: int, rng: int, *,
                 u_ref: Optional[float] = None, step_cap: float = DEFAULT_STEP_CAP,
                 key: Optional[int] = None) -> BondConfig:
    """Bond configuration of ``sample_window(...)`` without storing trajectories.

    Identical to ``build_bonds(sample_window(...))`` for the same arguments.
    Walks are streamed, so ``step_cap`` bounds the padded volume instead.
    """
    if margin < 0:
        raise ValueError("margin must be non-negative")
    padded = window.padded(margin)
    _guard(p, padded, step_cap, streaming=True)
    key = process_key(rng) if key is None else key
    lam, keep, s = _kernel_args(p, u_ref)
    bits, _, _ = K.sample_bonds(key, padded.lo, padded.shape, lam, keep, s, window.lo, window.shape)
    return BondConfig(window, bits.reshape(window.shape))


def _check_weights(weights: Sequence[float]):
    w = [float(x) for x in weights]
    if not w or any(not x > 0 for x in w):
        raise ValueError("weights must be positive")
    if abs(math.fsum(w) - 1.0) > 1e-12:
        raise ValueError(f"weights sum to {math.fsum(w)!r}, not 1")
    return w


def thin(p: FriParams, weights: Sequence[float], window: Box, margin: int, rng: int,
         **kw) -> list[FriSample]:
    """Independent samples at intensities ``u * w_i``; their union has the
    law of one sample at intensity ``u``."""
    w = _check_weights(weights)
    if len(w) == 1:
        return [sample_window(p, window, margin, rng, **kw)]
    return [sample_window(p.scaled(wi), window, margin, rng, key=process_key(rng, _THIN, i), **kw)
            for i, wi in enumerate(w)]


def thin_bonds(p: FriParams, weights: Sequence[float], window: Box, margin: int, rng: int,
               **kw) -> BondConfig:
    """Union of the bond configurations of ``thin(...)``."""
    w = _check_weights(weights)
    if len(w) == 1:
        return sample_bonds(p, window, margin, rng, **kw)
    bits = np.zeros(window.shape, dtype=np.uint8)
    for i, wi in enumerate(w):
        b = sample_bonds(p.scaled(wi), window, margin, rng, key=process_key(rng, _THIN, i), **kw)
        bits |= b.bits
    return BondConfig(window, bits)


def sample_hit_trajectories(p: FriParams, A, padded: Box, rng: int, *, key: Optional[int] = None,
                            u_ref: Optional[float] = None):
    """Trajectories started in ``padded`` that visit ``A``, found without
    storing the others. Returns ``(starts, first_hit, lengths)``."""
    mask, lo = site_mask(A)
    key = process_key(rng) if key is None else key
    lam, keep, s = _kernel_args(p, u_ref)
    return K.sample_hits(key, padded.lo, padded.shape, lam, keep, s, mask, lo, mask.shape)


# -- margin selection ------------------------------------------------------

def reach_probability(k: np.ndarray, T: float, d: int, bound: str = "diffusive") -> np.ndarray:
    """Upper bound on the chance that a killed walk ever gets l-infinity
    distance ``k`` from its start.

    ``"ballistic"`` uses only ``length >= k``, i.e. ``(T/(T+1))^k``.
    ``"diffusive"`` also applies Freedman's martingale inequality to each
    coordinate: ``P(max_j |S_j| >= k | L) <= 2 exp(-k^2 / (2(L/d + k/3)))``.
    """
    s = T / (T + 1.0)
    k = np.atleast_1d(np.asarray(k, dtype=float))
    if bound == "ballistic":
        return s ** k
    if bound != "diffusive":
        raise ValueError(f"unknown bound {bound!r}")
    out = np.empty_like(k)
    tail_len = int(60 * (T + 1)) + 1
    for i, kk in enumerate(k):
        L = kk + np.arange(tail_len, dtype=float)
        pl = (1 - s) * np.exp(L * math.log(s))
        tail = np.minimum(1.0, 2 * d * np.exp(-kk * kk / (2 * (L / d + kk / 3.0))))
        out[i] = float(np.sum(pl * tail)) + s ** (kk + tail_len)
    return np.minimum(out, s ** k)


def margin_bound(r: int, T: float, *, u: float, d: int, window_radius: int,
                 bound: str = "green") -> float:
    """Upper bound on the expected number of trajectories started outside the
    padded box ``B(window_radius + r)`` that enter ``B(window_radius)``; by
    Markov's inequality it also bounds the probability that any does.

    ``"green"`` counts expected visits to the window exactly (a union bound
    over window sites); ``"diffusive"`` and ``"ballistic"`` sum the reach
    bounds of :func:`reach_probability` over shells.
    """
    lam = 2 * d * u / (T + 1)
    if bound == "green":
        from .potential import outside_visit_mass
        return lam * outside_visit_mass(window_radius, r, T / (T + 1.0), d)
    total = 0.0
    k = r + 1
    block = 256
    while True:
        ks = np.arange(k, k + block)
        shells = np.array([shell_count(d, window_radius, int(kk)) for kk in ks], dtype=float)
        terms = lam * shells * reach_probability(ks, T, d, bound)
        total += float(terms.sum())
        if terms[-1] <= 1e-18 * max(total, 1e-300) or terms[-1] < 1e-300:
            return total
        k += block


def recommended_margin(T: float, epsilon: float, *, u: float = 1.0, d: int = 3,
                       window_radius: int = 0, bound: str = "green") -> int:
    """Smallest margin whose restriction error bound is at most ``epsilon``."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")

    def ok(r):
        return margin_bound(r, T, u=u, d=d, window_radius=window_radius, bound=bound) <= epsilon

    if ok(0):
        return 0
    hi = 1
    while not ok(hi):
        hi *= 2
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


# -- lucky paths -------------------------------------------------------------

def lucky_annulus(x: Site, T: float) -> tuple[float, float]:
    r = math.sqrt(T)
    return 6 * r, 8 * r


def _lucky_filter(starts, hits, lengths, x, T):
    inner, outer = lucky_annulus(x, T)
    if len(starts) == 0:
        return 0
    dist = np.max(np.abs(np.asarray(starts) - np.asarray(x)), axis=1)
    in_ann = (dist > inner) & (dist <= outer)
    ok = (hits >= 0) & (lengths - hits >= T)
    return int(np.count_nonzero(in_ann & ok))


def _check_lucky_target(x, A, T):
    x = as_site(x)
    A = [as_site(a) for a in A]
    if any(linf_distance(a, x) > 1.5 * math.sqrt(T) for a in A):
        raise ValueError("A must lie within B_x(1.5 sqrt(T))")
    return x, A


def lucky_path_count(s: FriSample, x: Site, A) -> int:
    """Number of trajectories started in ``B_x(8√T) \\ B_x(6√T)`` whose
    part after first hitting ``A`` still has at least ``T`` steps."""
    T = s.params.T
    x, A = _check_lucky_target(x, A, T)
    _, outer = lucky_annulus(x, T)
    if linf_distance(x, s.padded.center) + math.floor(outer) > s.padded.radius:
        raise ValueError("lucky-path annulus exceeds the padded box")
    if len(s) == 0 or not A:
        return 0
    hits = s.first_hits(A)
    return _lucky_filter(s.starts, hits, s.lengths, x, T)


def sample_lucky_count(p: FriParams, x: Site, A, rng: int) -> int:
    """``lucky_path_count`` of the realization with seed ``rng``, sampling
    only the annulus' bounding box."""
    x, A = _check_lucky_target(x, A, p.T)
    if not A:
        return 0
    _, outer = lucky_annulus(x, p.T)
    box = Box(x, int(math.floor(outer)))
    starts, hits, lengths = sample_hit_trajectories(p, A, box, rng)
    return _lucky_filter(starts, hits, lengths, x, p.T)


# -- binary serialization ---------------------------------------------------

MAGIC = b"FRIS"
VERSION = 1


def encode_sample(s: FriSample) -> bytes:
    d = s.params.d
    head = struct.pack("<4sHHdd", MAGIC, VERSION, d, s.params.u, s.params.T)
    head += struct.pack(f"<{d}i", *s.window.center)
    head += struct.pack("<iiQQQ", s.window.radius, s.margin, s.seed & (2**64 - 1),
                        s.key & (2**64 - 1), len(s))
    parts = [head]
    rec = struct.Struct(f"<{d}iQ")
    for i in range(len(s)):
        parts.append(rec.pack(*(int(c) for c in s.starts[i]), int(s.lengths[i])))
        parts.append(s.dirs[s.offsets[i]:s.offsets[i + 1]].tobytes())
    return b"".join(parts)


def decode_sample(buf: bytes) -> FriSample:
    magic, version, d, u, T = struct.unpack_from("<4sHHdd", buf, 0)
    if magic != MAGIC:
        raise ValueError("not a FRI sample file")
    if version != VERSION:
        raise ValueError(f"unsupported sample version {version}")
    off = struct.calcsize("<4sHHdd")
    center = struct.unpack_from(f"<{d}i", buf, off)
    off += 4 * d
    radius, margin, seed, key, n = struct.unpack_from("<iiQQQ", buf, off)
    off += struct.calcsize("<iiQQQ")
    rec = struct.Struct(f"<{d}iQ")
    starts = np.empty((n, d), dtype=np.int64)
    lengths = np.empty(n, dtype=np.int64)
    chunks = []
    for i in range(n):
        vals = rec.unpack_from(buf, off)
        off += rec.size
        starts[i] = vals[:d]
        L = vals[d]
        lengths[i] = L
        chunks.append(np.frombuffer(buf, dtype=np.uint8, count=L, offset=off))
        off += L
    if off != len(buf):
        raise ValueError("trailing bytes in sample file")
    dirs = np.concatenate(chunks) if chunks else np.empty(0, dtype=np.uint8)
    return FriSample(FriParams(u, T, d), Box(center, radius), margin, seed, starts, lengths,
                     dirs.copy(), key)
