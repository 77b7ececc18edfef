"""Seeded, splittable pseudo-random numbers.

The generator is SplitMix64 (Steele, Lea & Flood, 2014): a 64-bit counter
advanced by the golden-ratio increment and passed through a fixed mixing
function. Because output ``i`` depends only on ``seed + i * GAMMA``, blocks of
draws are computed with vectorized uint64 arithmetic and every stream is
reproducible bit-for-bit from its seed, independent of platform or BLAS.
"""
from __future__ import annotations

import numpy as np
from scipy import special

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 stream. ``state`` is the 64-bit counter."""

    def __init__(self, seed: int = 0):
        self.state = int(seed) & _MASK64

    def next_u64(self, n: int) -> np.ndarray:
        n = int(n)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            counters = np.uint64(self.state) + steps * GAMMA
            out = _mix(counters)
        self.state = (self.state + n * int(GAMMA)) & _MASK64
        return out

    def split(self) -> "Rng":
        """Child stream seeded from the next output of this one."""
        return Rng(int(self.next_u64(1)[0]))

    def random(self, shape=()) -> np.ndarray:
        """Uniform doubles in [0, 1) from the top 53 bits."""
        n = int(np.prod(shape, dtype=np.int64))
        bits = self.next_u64(n) >> np.uint64(11)
        return (bits.astype(np.float64) * (1.0 / (1 << 53))).reshape(shape)

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """Box-Muller transform of two uniform blocks."""
        n = int(np.prod(shape, dtype=np.int64))
        u1 = 1.0 - self.random(n)  # (0, 1], keeps log finite
        u2 = self.random(n)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return (mean + std * z).reshape(shape)

    def truncated_normal(self, shape=(), std: float = 1.0, bound: float = 2.0) -> np.ndarray:
        """Zero-mean normal truncated to [-bound*std, bound*std] by inverse CDF."""
        lo, hi = special.ndtr(-bound), special.ndtr(bound)
        u = lo + (hi - lo) * self.random(shape)
        z = np.clip(special.ndtri(u), -bound, bound)
        return std * z

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers in [low, high); modulo bias is below 2**-40 for small ranges."""
        n = int(np.prod(shape, dtype=np.int64))
        span = np.uint64(high - low)
        return (low + (self.next_u64(n) % span).astype(np.int64)).reshape(shape)
