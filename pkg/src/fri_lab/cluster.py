"""Occupied bonds, cluster labels and chemical-distance geometry.

A ``BondConfig`` is a dense byte grid over its window: bit ``a`` of a site
marks the bond to ``site + e_a`` and bit 7 marks the site occupied (visited
by some trajectory, including length-0 ones).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Optional

import numpy as np

from . import _kernels as K
from .lattice import Box, Site, as_site, l1_distance

OCC = 128
INF = "inf"


class BondConfig:
    def __init__(self, window: Box, bits: np.ndarray):
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.shape != window.shape:
            bits = bits.reshape(window.shape)
        self.window = window
        self.bits = bits

    @property
    def d(self) -> int:
        return self.window.d

    @property
    def flat(self) -> np.ndarray:
        return self.bits.reshape(-1)

    @classmethod
    def empty(cls, window: Box) -> "BondConfig":
        return cls(window, np.zeros(window.shape, dtype=np.uint8))

    @classmethod
    def from_edges(cls, window: Box, edges: Iterable[tuple[Site, Site]],
                   isolated: Iterable[Site] = ()) -> "BondConfig":
        cfg = cls.empty(window)
        for a, b in edges:
            cfg.add_bond(a, b)
        for s in isolated:
            cfg.flat[window.index(as_site(s))] |= OCC
        return cfg

    @classmethod
    def full(cls, window: Box) -> "BondConfig":
        """Every bond of the window open."""
        bits = np.full(window.shape, OCC, dtype=np.uint8)
        for a in range(window.d):
            sl = [slice(None)] * window.d
            sl[a] = slice(0, window.side - 1)
            bits[tuple(sl)] |= 1 << a
        return cls(window, bits)

    def copy(self) -> "BondConfig":
        return BondConfig(self.window, self.bits.copy())

    def _bond_slot(self, a: Site, b: Site) -> tuple[int, int]:
        a, b = as_site(a), as_site(b)
        if l1_distance(a, b) != 1:
            raise ValueError(f"{a}-{b} is not a nearest-neighbour bond")
        lo = min(a, b)
        axis = next(i for i in range(len(a)) if a[i] != b[i])
        if not (self.window.contains(a) and self.window.contains(b)):
            raise ValueError(f"bond {a}-{b} leaves the window")
        return self.window.index(lo), axis

    def add_bond(self, a: Site, b: Site) -> None:
        idx, axis = self._bond_slot(a, b)
        self.flat[idx] |= 1 << axis
        self.flat[self.window.index(as_site(a))] |= OCC
        self.flat[self.window.index(as_site(b))] |= OCC

    def has_bond(self, a: Site, b: Site) -> bool:
        try:
            idx, axis = self._bond_slot(a, b)
        except ValueError:
            return False
        return bool(self.flat[idx] >> axis & 1)

    def is_occupied(self, s: Site) -> bool:
        s = as_site(s)
        return self.window.contains(s) and bool(self.flat[self.window.index(s)] & OCC)

    @property
    def n_bonds(self) -> int:
        low = self.flat & 0x7F
        return int(sum(np.count_nonzero(low & (1 << a)) for a in range(self.d)))

    @property
    def n_occupied(self) -> int:
        return int(np.count_nonzero(self.flat & OCC))

    @property
    def possible_bonds(self) -> int:
        n = self.window.side
        return self.d * (n - 1) * n ** (self.d - 1)

    @property
    def bond_density(self) -> float:
        return self.n_bonds / self.possible_bonds if self.possible_bonds else 0.0

    def bonds(self) -> Iterator[tuple[Site, Site]]:
        flat = self.flat
        for idx in np.nonzero(flat & 0x7F)[0]:
            x = self.window.site(idx)
            for a in range(self.d):
                if flat[idx] >> a & 1:
                    y = list(x)
                    y[a] += 1
                    yield x, tuple(y)

    def occupied_sites(self) -> np.ndarray:
        return self.window.coords(np.nonzero(self.flat & OCC)[0]).reshape(-1, self.d)

    def restrict(self, box: Box) -> "BondConfig":
        """Bonds with both endpoints in ``box`` (a sub-box of the window)."""
        if not self.window.contains_box(box):
            raise ValueError("box exceeds window")
        off = box.lo - self.window.lo
        sl = tuple(slice(int(o), int(o) + box.side) for o in off)
        sub = self.bits[sl].copy()
        for a in range(self.d):
            edge = [slice(None)] * self.d
            edge[a] = box.side - 1
            sub[tuple(edge)] &= np.uint8(0xFF ^ (1 << a))
        return BondConfig(box, sub)

    def to_edge_list(self) -> str:
        lines = [" ".join(str(c) for c in (*a, *b)) for a, b in self.bonds()]
        return "\n".join(lines) + ("\n" if lines else "")

    def write_edge_list(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_edge_list())

    @classmethod
    def read_edge_list(cls, path, window: Box) -> "BondConfig":
        edges = []
        with open(path) as fh:
            for line in fh:
                vals = [int(v) for v in line.split()]
                if not vals:
                    continue
                if len(vals) != 2 * window.d:
                    raise ValueError(f"bad edge row: {line!r}")
                edges.append((tuple(vals[:window.d]), tuple(vals[window.d:])))
        return cls.from_edges(window, edges)

    def __eq__(self, other):
        return (isinstance(other, BondConfig) and self.window == other.window
                and np.array_equal(self.bits, other.bits))


def build_bonds(sample) -> BondConfig:
    """Bonds traversed by at least one trajectory of ``sample``, clipped to
    its window; length-0 walks leave their start occupied."""
    w = sample.window
    bits = K.mark_bonds(sample.starts, sample.lengths, sample.dirs, w.lo, w.shape)
    return BondConfig(w, bits.reshape(w.shape))


class ClusterLabels:
    """Connected components of the occupied-bond graph.

    ``labels[i]`` is the linear index of the smallest site (lexicographic
    order) in the cluster of site ``i``, or -1 if ``i`` is unoccupied; that
    smallest site is the cluster id.
    """

    def __init__(self, config: BondConfig, labels: np.ndarray):
        self.config = config
        self.labels = labels

    @property
    def window(self) -> Box:
        return self.config.window

    @cached_property
    def _roots_sizes(self):
        return K.cluster_sizes(self.labels)

    @property
    def roots(self) -> np.ndarray:
        return self._roots_sizes[0]

    @property
    def sizes(self) -> np.ndarray:
        return self._roots_sizes[1]

    @property
    def n_clusters(self) -> int:
        return len(self.roots)

    def cluster_id(self, s: Site) -> Optional[Site]:
        s = as_site(s)
        if not self.window.contains(s):
            return None
        lab = self.labels[self.window.index(s)]
        return None if lab < 0 else self.window.site(lab)

    def size_map(self) -> dict[Site, int]:
        return {self.window.site(r): int(n) for r, n in zip(self.roots, self.sizes)}

    def members(self, root: int) -> np.ndarray:
        return self.window.coords(np.nonzero(self.labels == root)[0]).reshape(-1, self.config.d)

    def touches_boundary(self) -> np.ndarray:
        """Roots of the clusters that contain a site of the window's boundary."""
        lab = self.labels.reshape(self.window.shape)
        d = self.config.d
        hits = []
        for a in range(d):
            for end in (0, -1):
                sl = [slice(None)] * d
                sl[a] = end
                hits.append(lab[tuple(sl)].ravel())
        on = np.concatenate(hits)
        return np.unique(on[on >= 0])

    def same_cluster(self, x: Site, y: Site) -> bool:
        cx = self.cluster_id(x)
        return cx is not None and cx == self.cluster_id(y)


def build_clusters(b: BondConfig) -> ClusterLabels:
    labels = K.label_clusters(b.flat, b.window.shape)
    return ClusterLabels(b, labels)


def largest_cluster(l: ClusterLabels) -> tuple[Site, np.ndarray]:
    """Id and sites of the largest cluster; ties go to the smallest id."""
    if l.n_clusters == 0:
        raise ValueError("configuration has no occupied site")
    i = int(np.argmax(l.sizes))  # first maximum = smallest root
    root = int(l.roots[i])
    return l.window.site(root), l.members(root)


def giant_root(l: ClusterLabels) -> Optional[int]:
    """Root index of the largest cluster if it touches the window boundary.

    This is the finite-window stand-in for the infinite cluster.
    """
    if l.n_clusters == 0:
        return None
    root = int(l.roots[int(np.argmax(l.sizes))])
    return root if root in set(l.touches_boundary().tolist()) else None


# -- chemical distance -----------------------------------------------------

def _region(b: BondConfig, region: Optional[Box]):
    if region is None:
        return np.zeros(b.d, dtype=np.int64), np.full(b.d, b.window.side - 1, dtype=np.int64)
    if not b.window.contains_box(region):
        raise ValueError("region exceeds window")
    rlo = region.lo - b.window.lo
    return rlo, rlo + region.side - 1


def distance_field(b: BondConfig, sources, region: Optional[Box] = None,
                   max_dist: Optional[int] = None) -> np.ndarray:
    """Chemical distance from the nearest of ``sources`` to every site
    (flat int32 array, -1 where unreachable)."""
    rlo, rhi = _region(b, region)
    src = np.asarray([b.window.index(as_site(s)) for s in sources], dtype=np.int64)
    lim = np.iinfo(np.int32).max if max_dist is None else int(max_dist)
    return K.bfs(b.flat, b.window.shape, src, rlo, rhi, lim)


def chemical_distance(b: BondConfig, x: Site, y: Site, region: Optional[Box] = None) -> Optional[int]:
    """Fewest occupied bonds on a path from ``x`` to ``y`` inside ``region``
    (default: the window). None stands for infinity."""
    x, y = as_site(x), as_site(y)
    box = region or b.window
    if not (box.contains(x) and box.contains(y)):
        return None
    if not (b.is_occupied(x) and b.is_occupied(y)):
        return None
    dist = distance_field(b, [x], region)
    v = int(dist[b.window.index(y)])
    return None if v < 0 else v


def chemical_ball(b: BondConfig, origin: Site, n: int) -> np.ndarray:
    """Sites within chemical distance ``n`` of ``origin``, as an ``(m, d)`` array."""
    origin = as_site(origin)
    if not b.is_occupied(origin):
        raise ValueError(f"origin {origin} is not occupied")
    dist = distance_field(b, [origin], max_dist=n)
    return b.window.coords(np.nonzero(dist >= 0)[0]).reshape(-1, b.d)


def face_indices(b: BondConfig, box: Box, axis: int, sign: int) -> np.ndarray:
    """Window linear indices of ``face(box, axis, sign)`` (axis is 1-based)."""
    off = box.lo - b.window.lo
    ranges = [np.arange(int(o), int(o) + box.side) for o in off]
    ranges[axis - 1] = np.array([int(off[axis - 1]) + (0 if sign < 0 else box.side - 1)])
    grids = np.meshgrid(*ranges, indexing="ij")
    return np.ravel_multi_index([g.ravel() for g in grids], b.window.shape)


def crossing_exists(b: BondConfig, box: Box, axis: int = 1) -> bool:
    """Is there an occupied path inside ``box`` from its ``-axis`` face to its
    ``+axis`` face?"""
    if not 1 <= axis <= b.d:
        raise ValueError(f"axis must be in 1..{b.d}")
    rlo, rhi = _region(b, box)
    left = face_indices(b, box, axis, -1)
    left = left[(b.flat[left] & OCC) != 0]
    if len(left) == 0:
        return False
    dist = K.bfs(b.flat, b.window.shape, left, rlo, rhi, np.iinfo(np.int32).max)
    right = face_indices(b, box, axis, +1)
    return bool(np.any(dist[right] >= 0))


def linf_diameters(l: ClusterLabels) -> tuple[np.ndarray, np.ndarray]:
    """Roots and l-infinity diameters of all clusters."""
    occ = np.nonzero(l.labels >= 0)[0]
    if len(occ) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    lab = l.labels[occ]
    coords = np.stack(np.unravel_index(occ, l.window.shape), axis=1)
    roots, inv = np.unique(lab, return_inverse=True)
    diam = np.zeros(len(roots), dtype=np.int64)
    for a in range(coords.shape[1]):
        hi = np.full(len(roots), np.iinfo(np.int64).min)
        lo = np.full(len(roots), np.iinfo(np.int64).max)
        np.maximum.at(hi, inv, coords[:, a])
        np.minimum.at(lo, inv, coords[:, a])
        diam = np.maximum(diam, hi - lo)
    return roots, diam


def local_uniqueness_violated(b: BondConfig, R: int) -> bool:
    """Do two clusters of the configuration restricted to ``B(R)``, each of
    l-infinity diameter at least ``ceil(R/10)``, fail to connect in ``B(2R)``?

    Boxes are centred on the window centre.
    """
    c = b.window.center
    inner, outer = Box(c, R), Box(c, 2 * R)
    if not b.window.contains_box(outer):
        raise ValueError("window must contain B(2R)")
    small = b.restrict(inner)
    lab_in = build_clusters(small)
    roots, diam = linf_diameters(lab_in)
    big = roots[diam >= math.ceil(R / 10)]
    if len(big) < 2:
        return False
    lab_out = build_clusters(b.restrict(outer))
    # map each qualifying inner cluster (via its root site) to its outer label
    sites = inner.coords(big).reshape(-1, b.d)
    outer_labels = {int(lab_out.labels[outer.index(as_site(s))]) for s in sites}
    return len(outer_labels) > 1
