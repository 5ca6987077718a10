"""Geometry of Z^d: sites, l-infinity boxes, boundaries and faces.

Sites are plain tuples of ints. Boxes are l-infinity balls ``B_x(R)``; their
sites map to linear indices in C order (axis 0 slowest), the layout used by
every bitmap in the package.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

Site = tuple[int, ...]

MIN_DIM = 3
MAX_DIM = 5


def as_site(coords: Iterable[int]) -> Site:
    return tuple(int(c) for c in coords)


def _check_same_dim(a, b):
    if len(a) != len(b):
        raise ValueError(f"dimension mismatch: {len(a)} vs {len(b)}")


def linf_distance(a: Site, b: Site) -> int:
    _check_same_dim(a, b)
    return max((abs(x - y) for x, y in zip(a, b)), default=0)


def l1_distance(a: Site, b: Site) -> int:
    _check_same_dim(a, b)
    return sum(abs(x - y) for x, y in zip(a, b))


def unit(d: int, axis: int, sign: int = 1) -> Site:
    """``sign * e_axis`` with a 0-based axis."""
    e = [0] * d
    e[axis] = sign
    return tuple(e)


def neighbors(s: Site) -> list[Site]:
    """The 2d nearest neighbours, axis-major with the minus step first.

    This order matches the walk direction code ``2 * axis + (step > 0)``.
    """
    out = []
    for a in range(len(s)):
        for step in (-1, 1):
            t = list(s)
            t[a] += step
            out.append(tuple(t))
    return out


@dataclass(frozen=True)
class Box:
    """The l-infinity ball of ``radius`` around ``center``."""

    center: Site
    radius: int

    def __post_init__(self):
        object.__setattr__(self, "center", as_site(self.center))
        if self.radius < 0:
            raise ValueError("radius must be non-negative")

    @classmethod
    def origin(cls, d: int, radius: int) -> "Box":
        return cls((0,) * d, radius)

    @property
    def d(self) -> int:
        return len(self.center)

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.center, dtype=np.int64) - self.radius

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.center, dtype=np.int64) + self.radius

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.d

    @property
    def volume(self) -> int:
        return self.side ** self.d

    def contains(self, s: Site) -> bool:
        _check_same_dim(s, self.center)
        return linf_distance(s, self.center) <= self.radius

    def contains_box(self, other: "Box") -> bool:
        return bool(np.all(other.lo >= self.lo) and np.all(other.hi <= self.hi))

    def padded(self, margin: int) -> "Box":
        return Box(self.center, self.radius + margin)

    def strides(self) -> np.ndarray:
        n = self.side
        return np.array([n ** (self.d - 1 - a) for a in range(self.d)], dtype=np.int64)

    def index(self, s: Site) -> int:
        """Linear index of ``s``; raises if ``s`` lies outside the box."""
        if not self.contains(s):
            raise ValueError(f"{s} outside {self}")
        rel = np.asarray(s, dtype=np.int64) - self.lo
        return int(rel @ self.strides())

    def indices(self, coords: np.ndarray) -> np.ndarray:
        rel = np.asarray(coords, dtype=np.int64) - self.lo
        return rel @ self.strides()

    def coords(self, idx) -> np.ndarray:
        """Absolute coordinates of linear index (or array of indices)."""
        rel = np.stack(np.unravel_index(np.asarray(idx), self.shape), axis=-1)
        return rel + self.lo

    def site(self, idx: int) -> Site:
        return as_site(self.coords(int(idx)))

    def sites(self) -> np.ndarray:
        """All sites, shape ``(volume, d)``, in linear-index order."""
        return self.coords(np.arange(self.volume))


def internal_boundary(b: Box) -> set[Site]:
    """Sites of ``b`` having at least one neighbour outside ``b``."""
    pts = b.sites()
    on_edge = np.any(np.abs(pts - np.asarray(b.center)) == b.radius, axis=1)
    return {as_site(p) for p in pts[on_edge]}


def face(b: Box, axis: int, sign: int) -> set[Site]:
    """Sites of ``b`` whose ``axis``-th coordinate (1-based) is ``center ± radius``."""
    if not 1 <= axis <= b.d:
        raise ValueError(f"axis must be in 1..{b.d}, got {axis}")
    if sign not in (-1, 1):
        raise ValueError("sign must be -1 or +1")
    pts = b.sites()
    target = b.center[axis - 1] + sign * b.radius
    return {as_site(p) for p in pts[pts[:, axis - 1] == target]}


def shell_count(d: int, radius: int, k: int) -> int:
    """Number of sites at l-infinity distance exactly ``k`` from ``B(radius)``."""
    if k == 0:
        return (2 * radius + 1) ** d
    return (2 * (radius + k) + 1) ** d - (2 * (radius + k) - 1) ** d
