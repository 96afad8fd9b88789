"""Portable seeded random streams.

The generator is xoshiro256** seeded through splitmix64.  To stay fast in
numpy it runs ``LANES`` independent xoshiro states side by side; the output
stream is the lane outputs of step 0, then step 1, and so on.  The stream is
fully determined by the 64-bit seed, independent of how callers chunk their
requests, and uses only integer arithmetic up to the final float conversion.
"""

from __future__ import annotations

import hashlib

import numpy as np

LANES = 1024

_MASK = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix64_block(seed: int, n: int) -> np.ndarray:
    # splitmix64 is counter based: output k mixes seed + (k + 1) * golden
    k = np.arange(1, n + 1, dtype=np.uint64)
    z = np.uint64(seed & _MASK) + k * _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _rotl(x: np.ndarray, k: int) -> np.ndarray:
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


def mix_seed(*parts: int | str) -> int:
    """Combine integers and strings into one 64-bit seed (stable across runs)."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


class Xoshiro256:
    """Lane-parallel xoshiro256** stream with a small numpy-style API."""

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be a non-negative integer")
        self.seed = int(seed) & _MASK
        words = _splitmix64_block(self.seed, 4 * LANES).reshape(LANES, 4)
        self._s = [words[:, i].copy() for i in range(4)]
        self._buffer = np.empty(0, dtype=np.uint64)

    def _step(self) -> np.ndarray:
        s0, s1, s2, s3 = self._s
        result = _rotl(s1 * np.uint64(5), 7) * np.uint64(9)
        t = s1 << np.uint64(17)
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        self._s[3] = _rotl(s3, 45)
        return result

    def next_u64(self, n: int) -> np.ndarray:
        chunks = [self._buffer]
        have = self._buffer.size
        while have < n:
            out = self._step()
            chunks.append(out)
            have += out.size
        stream = np.concatenate(chunks)
        self._buffer = stream[n:].copy()
        return stream[:n]

    def random(self, size: int | tuple[int, ...] = 1) -> np.ndarray:
        """Uniform doubles on [0, 1) with 53 bits of resolution."""
        n = int(np.prod(size))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        return u.reshape(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=1) -> np.ndarray:
        return low + (high - low) * self.random(size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=1) -> np.ndarray:
        # Box-Muller, cosine branch only; two uniforms per normal
        n = int(np.prod(size))
        u = self.random(2 * n)
        r = np.sqrt(-2.0 * np.log1p(-u[:n]))
        z = r * np.cos(2.0 * np.pi * u[n:])
        return (loc + scale * z).reshape(size)

    def integers(self, low: int, high: int, size=1) -> np.ndarray:
        """Integers on [low, high)."""
        if high <= low:
            raise ValueError("empty integer range")
        n = int(np.prod(size))
        span = high - low
        out = low + np.floor(self.random(n) * span).astype(np.int64)
        return np.minimum(out, high - 1).reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.random(n), kind="stable")

    def spawn(self, *key: int | str) -> "Xoshiro256":
        """Independent child stream keyed by ``key``; does not advance this one."""
        return Xoshiro256(mix_seed(self.seed, *key))
