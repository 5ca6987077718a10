"""Counter-based random streams.

A stream is a 64-bit key; its ``i``-th output is a pure function of
``(key, i)``. Child streams are derived by hashing, so every site,
trajectory, replica and walker owns an independent stream fixed by the
master seed alone, whatever the evaluation order or thread count.
"""
from __future__ import annotations

from ._pykernels import M64, child_key, draw, u01


def derive(seed: int, *path: int) -> int:
    """Key of the stream reached from ``seed`` along ``path``."""
    key = child_key(int(seed) & M64, 0x5EED)
    for p in path:
        key = child_key(key, int(p) & M64)
    return key


class Stream:
    """Sequential view of a counter-based stream."""

    def __init__(self, seed: int = 0, *path: int):
        self.key = derive(seed, *path)
        self.counter = 0

    @classmethod
    def from_key(cls, key: int) -> "Stream":
        st = cls.__new__(cls)
        st.key = int(key) & M64
        st.counter = 0
        return st

    def child(self, *path: int) -> "Stream":
        key = self.key
        for p in path:
            key = child_key(key, int(p) & M64)
        return Stream.from_key(key)

    def next_u64(self) -> int:
        x = draw(self.key, self.counter)
        self.counter += 1
        return x

    def uniform(self) -> float:
        return u01(self.next_u64())

    def integer(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` by multiply-shift (no rejection)."""
        return ((self.next_u64() & 0xFFFFFFFF) * n) >> 32

    def __repr__(self):
        return f"Stream(key={self.key:#018x}, counter={self.counter})"


def as_stream(rng) -> Stream:
    if isinstance(rng, Stream):
        return rng
    return Stream(int(rng))
