"""Time the compiled kernels against the pure-Python fallback.

Run with ``python3 benchmarks/bench_kernels.py [--repeat 3]``. Each case is
run on both backends, the outputs are compared for equality and the best
wall time of each is reported together with the speedup.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from fri_lab import _pykernels as py

try:
    from fri_lab import _ckernels as cy
except ImportError:  # extension not built
    cy = None


def _cases():
    s = 20 / 21
    d = 3
    plo, pshape = (-14, -14, -14), (29, 29, 29)
    wlo, wshape = (-6, -6, -6), (13, 13, 13)
    lam = 2 * d * 1.0 / 21

    def bonds(k):
        return k.sample_bonds(11, plo, pshape, lam, 1.0, s, wlo, wshape)

    bits, _, _ = py.sample_bonds(11, plo, pshape, lam, 1.0, s, wlo, wshape)
    src = np.array([np.ravel_multi_index((6, 6, 6), wshape)], dtype=np.int64)

    def label(k):
        return k.label_clusters(bits, wshape)

    def bfs(k):
        return k.bfs(bits, wshape, src, (0, 0, 0), (12, 12, 12), 1 << 30)

    mask = np.zeros((5, 5, 5), dtype=np.uint8)
    mask[2, 2, 2] = 1
    starts = np.tile(np.array([[6, 0, 0]], dtype=np.int64), (2000, 1))

    def hits(k):
        return k.hit_within(mask, (-2, -2, -2), (5, 5, 5), starts, 200, 5)

    occ = ((bits & py.OCC) != 0).astype(np.uint8)

    def walk(k):
        return k.lazy_walk(occ, wshape, (6, 6, 6), 20000, 3, np.array([10000, 20000], dtype=np.int64))

    return {"sample_bonds": bonds, "label_clusters": label, "bfs": bfs,
            "hit_within": hits, "lazy_walk": walk}


def _best(fn, repeat):
    out, best = None, float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return out, best


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    return a == b


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled extension not available; build with pip install -e .")
        return 1
    print(f"{'kernel':<16}{'python s':>12}{'cython s':>12}{'speedup':>10}  equal")
    for name, case in _cases().items():
        a, tp = _best(lambda: case(py), 1)
        b, tc = _best(lambda: case(cy), args.repeat)
        print(f"{name:<16}{tp:>12.4f}{tc:>12.5f}{tp / tc:>10.1f}  {_same(a, b)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
