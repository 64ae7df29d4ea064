"""Seedable PRNG used by the training loop and for deriving bulk generators.

The core generator is xoshiro256** (Blackman & Vigna), seeded through
splitmix64.  Its 256-bit state is tiny, serializable, and restored exactly
on checkpoint resume.  Bulk array synthesis (weight init, dataset
generation) goes through numpy Generators keyed by seeds derived from
splitmix64, which keeps one-time fills fast while staying fully
deterministic in the root seed.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new_state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, z ^ (z >> 31)


class Xoshiro256StarStar:
    """xoshiro256** generator with explicit get/set state for exact resume."""

    def __init__(self, seed: int):
        s = seed & _MASK64
        state = []
        for _ in range(4):
            s, out = splitmix64(s)
            state.append(out)
        self._s = state

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Float64 in [0, 1) using the top 53 bits."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def randint(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = _MASK64 - (_MASK64 + 1) % n
        while True:
            x = self.next_u64()
            if x <= limit:
                return x % n

    def shuffle(self, arr: np.ndarray) -> None:
        """In-place Fisher-Yates shuffle along the first axis."""
        for i in range(len(arr) - 1, 0, -1):
            j = self.randint(i + 1)
            arr[i], arr[j] = arr[j], arr[i]

    def permutation(self, n: int) -> np.ndarray:
        idx = np.arange(n)
        self.shuffle(idx)
        return idx

    def get_state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)

    def set_state(self, state) -> None:
        if len(state) != 4:
            raise ValueError("xoshiro256** state must have 4 words")
        self._s = [int(w) & _MASK64 for w in state]


def _fnv1a(text: str) -> int:
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & _MASK64
    return h


def derive_seed(root_seed: int, *streams: int | str) -> int:
    """Derive a child seed from a root seed and a stream path.

    Each path component advances a splitmix64 chain, so distinct paths give
    independent-looking child seeds while staying reproducible.  String
    components are hashed with FNV-1a first.
    """
    s = root_seed & _MASK64
    out = 0
    for part in streams:
        key = _fnv1a(part) if isinstance(part, str) else part & _MASK64
        s, out = splitmix64(s ^ key)
    if not streams:
        s, out = splitmix64(s)
    return out


def derived_generator(root_seed: int, *streams: int | str) -> np.random.Generator:
    """Numpy generator for bulk fills, keyed by (root_seed, stream path)."""
    return np.random.Generator(np.random.PCG64(derive_seed(root_seed, *streams)))
