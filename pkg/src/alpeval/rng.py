"""Portable pseudo-random numbers.

Everything random in the toolkit (weight init, datasets, batch order, attack
targets, random starts, Rademacher directions) is drawn from xoshiro256**
seeded through SplitMix64, both implemented from their public-domain
reference descriptions (Blackman & Vigna). Floats are built from the top 53
bits of a draw, normals by Box-Muller (one normal per two uniforms, no
caching) and bounded integers by rejection sampling, so a sequence can be
regenerated bit-for-bit in any language with 64-bit unsigned arithmetic.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a SplitMix64 state once.

    Returns:
        ``(new_state, output)``.
    """
    state = (state + _GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(seed: int, *tags: int) -> int:
    """Mix integer tags into a seed to get an independent 64-bit sub-seed."""
    state = seed & MASK64
    for tag in tags:
        state, out = splitmix64(state ^ (tag & MASK64))
        state = out
    _, out = splitmix64(state)
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** generator.

    The 256-bit state is filled with four consecutive SplitMix64 outputs of
    ``seed`` (reduced mod 2**64), as recommended by the reference code.
    """

    def __init__(self, seed: int = 0) -> None:
        sm = seed & MASK64
        words = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            words.append(out)
        self._s = words

    @classmethod
    def from_state(cls, state: list[int]) -> "Xoshiro256":
        if len(state) != 4 or not any(state):
            raise ValueError("state must be four words, not all zero")
        gen = cls.__new__(cls)
        gen._s = [w & MASK64 for w in state]
        return gen

    @property
    def state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)  # type: ignore[return-value]

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float) -> float:
        return low + (high - low) * self.random()

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        u1 = 1.0 - self.random()  # (0, 1], keeps log finite
        u2 = self.random()
        return mean + std * math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n)."""
        if n < 1:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < limit:
                return r % n

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``, swapping from the top down."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return np.asarray(perm, dtype=np.int64)

    def uniform_array(self, low: float, high: float, size: int) -> np.ndarray:
        return np.fromiter((self.uniform(low, high) for _ in range(size)), dtype=np.float64, count=size)

    def normal_array(self, size: int, std: float = 1.0) -> np.ndarray:
        return np.fromiter((self.normal(0.0, std) for _ in range(size)), dtype=np.float64, count=size)

    def signs(self, size: int) -> np.ndarray:
        """Independent +/-1 entries; the top bit of each draw decides the sign."""
        return np.fromiter(
            (1.0 if self.next_u64() >> 63 else -1.0 for _ in range(size)), dtype=np.float64, count=size
        )
