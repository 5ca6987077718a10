"""Simple and geometrically killed random walks on Z^d.

A killed walk dies with probability ``1/(T+1)`` before each step, so its
length is Geometric on ``{0, 1, ...}`` with mean ``T``; a length-0 walk
still occupies its start site.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Union

import numpy as np
from scipy import ndimage

from . import _kernels as K
from .lattice import Site, as_site, neighbors
from .rng import Stream, as_stream


@dataclass(frozen=True)
class KillParams:
    T: float

    def __post_init__(self):
        if not self.T >= 0:
            raise ValueError(f"T must be non-negative, got {self.T}")

    @property
    def survival(self) -> float:
        """Probability of surviving each step, ``T/(T+1)``."""
        return self.T / (self.T + 1.0)

    @property
    def kill_probability(self) -> float:
        return 1.0 / (self.T + 1.0)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A finite nearest-neighbour path stored as a start and direction codes.

    Direction ``c`` moves along axis ``c >> 1``, towards plus if ``c & 1``.
    """

    start: Site
    dirs: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "start", as_site(self.start))
        object.__setattr__(self, "dirs", np.asarray(self.dirs, dtype=np.uint8))

    @property
    def d(self) -> int:
        return len(self.start)

    @property
    def length(self) -> int:
        return len(self.dirs)

    def positions(self) -> np.ndarray:
        """All positions ``X_0 .. X_L`` as an ``(L+1, d)`` array."""
        d = self.d
        delta = np.zeros((self.length + 1, d), dtype=np.int64)
        if self.length:
            axis = self.dirs >> 1
            sign = 2 * (self.dirs & 1).astype(np.int64) - 1
            delta[np.arange(1, self.length + 1), axis] = sign
        return np.cumsum(delta, axis=0) + np.asarray(self.start, dtype=np.int64)

    @property
    def steps(self) -> list[Site]:
        """Positions ``X_1 .. X_L``."""
        return [as_site(p) for p in self.positions()[1:]]

    def __eq__(self, other):
        return (isinstance(other, Trajectory) and self.start == other.start
                and np.array_equal(self.dirs, other.dirs))

    @classmethod
    def from_positions(cls, positions: Iterable[Site]) -> "Trajectory":
        pts = np.asarray(list(positions), dtype=np.int64)
        diff = np.diff(pts, axis=0)
        if diff.size and not np.all(np.abs(diff).sum(axis=1) == 1):
            raise ValueError("consecutive positions must be lattice neighbours")
        axis = np.argmax(np.abs(diff), axis=1) if diff.size else np.empty(0, dtype=np.int64)
        plus = diff[np.arange(len(diff)), axis] > 0 if diff.size else np.empty(0, dtype=bool)
        return cls(as_site(pts[0]), (2 * axis + plus).astype(np.uint8))

    @classmethod
    def from_key(cls, start: Site, key: int, kp: KillParams) -> "Trajectory":
        """The walk driven by stream ``key``; this is how the FRI sampler
        draws each of its trajectories."""
        _, dirs = K.walk_dirs(int(key), len(start), kp.survival)
        return cls(start, dirs)


def sample_killed_walk(start: Site, kp: KillParams, rng: Union[Stream, int]) -> Trajectory:
    """Sample one killed walk; successive calls on one stream are independent."""
    st = as_stream(rng)
    key = K.child_key(st.key, st.counter)
    st.counter += 1
    return Trajectory.from_key(as_site(start), key, kp)


def first_hit_index(tr: Trajectory, A) -> Optional[int]:
    """Smallest ``k >= 0`` with ``X_k`` in ``A``, or None."""
    A = set(map(as_site, A))
    for k, p in enumerate(tr.positions()):
        if tuple(int(c) for c in p) in A:
            return k
    return None


def suffix_after_hit(tr: Trajectory, A) -> Optional[Trajectory]:
    """The part of ``tr`` from its first visit to ``A`` onward, or None."""
    m = first_hit_index(tr, A)
    if m is None:
        return None
    return Trajectory(as_site(tr.positions()[m]), tr.dirs[m:])


def _member(S) -> Callable[[Site], bool]:
    return S if callable(S) else (lambda s: s in S)


def lazy_cluster_step(S, y: Site, rng: Union[Stream, int]) -> Site:
    """One step of the lazy walk on the site set ``S``.

    A uniform direction among the ``2d`` is proposed; the walk moves if the
    target is in ``S`` and stays put otherwise, so an occupied neighbour is
    reached with probability ``1/2d`` and the walk holds with probability
    ``1 - deg(y)/2d``.
    """
    inside = _member(S)
    y = as_site(y)
    if not inside(y):
        raise ValueError(f"{y} is not in the site set")
    st = as_stream(rng)
    z = neighbors(y)[st.integer(2 * len(y))]
    return z if inside(z) else y


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    n: int

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.stderr


def binomial_estimate(successes: int, n: int) -> Estimate:
    p = successes / n
    return Estimate(p, math.sqrt(max(p * (1 - p), 0.0) / n), n)


def escape_state(K_sites, R_escape: int):
    """State grid for escape walks: 2 on K, 1 within distance ``R_escape`` of K,
    0 beyond. Returns ``(state, lo)``."""
    pts = np.asarray([as_site(s) for s in K_sites], dtype=np.int64)
    lo = pts.min(axis=0) - R_escape
    hi = pts.max(axis=0) + R_escape
    shape = tuple(int(x) for x in hi - lo + 1)
    kmask = np.zeros(shape, dtype=bool)
    kmask[tuple((pts - lo).T)] = True
    near = ndimage.maximum_filter(kmask, size=2 * R_escape - 1, mode="constant") if R_escape > 1 else kmask
    state = near.astype(np.uint8)
    state[kmask] = 2
    return state, lo


def escape_probability_mc(K_sites, x: Site, R_escape: int, replicas: int,
                          rng: Union[Stream, int]) -> Estimate:
    """Fraction of walks from ``x`` that get l-infinity distance ``R_escape``
    away from ``K`` before returning to it.

    A finite-range surrogate for the escape probability ``P_x(no return)``,
    biased upward by the chance of returning from beyond ``R_escape``.
    """
    if replicas <= 0:
        raise ValueError("replicas must be positive")
    if R_escape < 1:
        raise ValueError("R_escape must be at least 1")
    K_set = {as_site(s) for s in K_sites}
    x = as_site(x)
    if x not in K_set:
        raise ValueError("x must belong to K")
    state, lo = escape_state(K_set, R_escape)
    st = as_stream(rng)
    n_esc = K.escape_walks(state, state.shape, np.asarray(x) - lo, replicas, st.child(0).key)
    return binomial_estimate(int(n_esc), replicas)
