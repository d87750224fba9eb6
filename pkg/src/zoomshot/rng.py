"""Deterministic 64-bit PRNG used for every random choice in the package.

The generator is xoshiro256** (Blackman & Vigna), seeded through splitmix64.
Both are pure integer arithmetic on 64-bit words, so the exact same stream
is produced on every platform and Python build. All shuffling, subsampling,
weight initialisation and synthetic-world sampling draw from this stream;
nothing uses Python's `random` or NumPy's global RNG.
"""

from __future__ import annotations

import math

_MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step. Returns (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def mix_seed(seed: int, stream: int) -> int:
    """Derive an independent 64-bit seed for a named sub-stream."""
    s = seed & _MASK64
    s, a = splitmix64(s ^ (stream & _MASK64))
    _, b = splitmix64(s)
    return (a ^ (b << 1)) & _MASK64


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256:
    """xoshiro256** generator with a splitmix64-expanded seed."""

    def __init__(self, seed: int):
        state = seed & _MASK64
        self.s = []
        for _ in range(4):
            state, out = splitmix64(state)
            self.s.append(out)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) via rejection sampling (no modulo bias)."""
        if n <= 0:
            raise ValueError("n must be positive")
        threshold = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < threshold:
                return x % n

    def next_float(self) -> float:
        """Uniform float64 in [0, 1) using the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def next_gauss(self) -> tuple[float, float]:
        """One Box-Muller pair of standard normals."""
        # u1 must be nonzero for the log
        u1 = self.next_float()
        while u1 == 0.0:
            u1 = self.next_float()
        u2 = self.next_float()
        r = math.sqrt(-2.0 * math.log(u1))
        return r * math.cos(2.0 * math.pi * u2), r * math.sin(2.0 * math.pi * u2)

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n)."""
        order = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.next_below(i + 1)
            order[i], order[j] = order[j], order[i]
        return order

    def uniform(self, lo: float, hi: float, count: int) -> list[float]:
        return [lo + (hi - lo) * self.next_float() for _ in range(count)]

    def gauss(self, count: int) -> list[float]:
        out = []
        while len(out) < count:
            a, b = self.next_gauss()
            out.append(a)
            if len(out) < count:
                out.append(b)
        return out
