"""Portable 64-bit random streams.

Weights and synthetic images are drawn from ``xorshift64*`` (Marsaglia's
xorshift with a multiplicative output scramble, shifts 12/25/27 and multiplier
0x2545F4914F6CDD1D). Seeds are expanded with one round of ``splitmix64`` so that
nearby integer seeds give unrelated streams and a zero seed is never fed to the
xorshift state. Doubles take the top 53 bits of each output, so the sequence is
identical on every platform that has IEEE-754 doubles.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_MULT = 0x2545F4914F6CDD1D


def splitmix64(x: int) -> int:
    """One splitmix64 step; used for seed expansion and stream splitting."""
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    """Child seed for stream ``index``; independent of how work is scheduled."""
    return splitmix64((master_seed & MASK64) ^ splitmix64(index & MASK64))


class XorShift64Star:
    """xorshift64* generator.

    >>> g = XorShift64Star(1)
    >>> 0.0 <= g.random() < 1.0
    True
    """

    def __init__(self, seed: int):
        state = splitmix64(int(seed) & MASK64)
        self.state = state if state != 0 else 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * _MULT) & MASK64

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        out = np.fromiter((self.random() for _ in range(n)), dtype=np.float64, count=n)
        return (low + (high - low) * out).reshape(shape)
