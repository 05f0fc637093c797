"""SplitMix64, the package's only source of randomness.

The generator is counter based: the i-th output (i = 1, 2, ...) of a stream
with seed s is mix(s + i * 0x9E3779B97F4A7C15 mod 2^64) where

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

with all arithmetic mod 2^64. A double in [0, 1) is (z >> 11) * 2^-53. The
definition is short enough to reimplement anywhere, which is the point.
"""
from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
MASK = (1 << 64) - 1


def mix(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Sequential stream; ``position`` counts outputs consumed so far."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK
        self.position = 0

    def next_u64(self, count: int) -> np.ndarray:
        i = np.arange(self.position + 1, self.position + count + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            states = np.uint64(self.seed) + i * GOLDEN
        self.position += count
        return mix(states)

    def random(self, count: int) -> np.ndarray:
        """Uniform doubles in [0, 1)."""
        return (self.next_u64(count) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform(self, low: float, high: float, count: int) -> np.ndarray:
        return low + (high - low) * self.random(count)

    def integers(self, bound: int, count: int) -> np.ndarray:
        """Integers in [0, bound) via floor(u * bound)."""
        return np.minimum((self.random(count) * bound).astype(np.int64), bound - 1)

    def spawn(self, tag: int) -> "SplitMix64":
        """Independent child stream keyed by an integer tag."""
        return SplitMix64(int(mix(np.uint64((self.seed ^ (tag * 0x2545F4914F6CDD1D)) & MASK))))
