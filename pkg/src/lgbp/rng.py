"""Portable deterministic random streams.

Experiment reproducibility must not depend on library RNG internals, so
weights and clause choices come from a self-contained splitmix64 generator
with Box-Muller normal variates.  Streams are split by hashing the master
seed with integer stream labels; the same (seed, labels) pair yields the
same bytes on every platform.
"""
from __future__ import annotations

import math

_MASK = (1 << 64) - 1


def _splitmix64_next(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def derive_seed(master: int, *labels: int) -> int:
    """Fold integer labels into a 64-bit stream seed (model seed = hash(master, id))."""
    state = master & _MASK
    for label in labels:
        state, out = _splitmix64_next(state ^ (label & _MASK))
        state ^= out
    _, out = _splitmix64_next(state)
    return out


class Stream:
    """Sequential splitmix64 stream with uniform/normal/choice draws."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state, out = _splitmix64_next(self._state)
        return out

    def uniform(self) -> float:
        # 53-bit mantissa in [0, 1)
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self) -> float:
        # Box-Muller; u clamped away from 0 so log stays finite.
        u = max(self.uniform(), 5e-324)
        v = self.uniform()
        return math.sqrt(-2.0 * math.log(u)) * math.cos(2.0 * math.pi * v)

    def randint(self, n: int) -> int:
        """Uniform int in [0, n) by rejection (n tiny in practice)."""
        if n <= 0:
            raise ValueError("randint bound must be positive")
        limit = (_MASK + 1) - ((_MASK + 1) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        pool = list(range(n))
        out = []
        for _ in range(k):
            out.append(pool.pop(self.randint(len(pool))))
        return out
