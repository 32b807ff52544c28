"""Deterministic random streams.

All randomness in the package flows through :class:`Rng`, a thin wrapper
around the counter-based Philox4x64 bit generator.  Only the raw 64-bit
stream of the bit generator is consumed; uniform and normal variates are
derived from it explicitly (53-bit mantissa scaling, Box-Muller), so the
byte content of every sample is a pure function of (seed, call sequence)
and does not depend on numpy's Generator distribution internals.

Streams are derived by key, not by position: ``rng.child(i, j)`` is
independent of how much ``rng`` itself has been consumed, and
``rng.child(i).child(j)`` equals ``rng.child(i, j)``.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_BUFFER_MIN = 64
_BUFFER_MAX = 4096


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """Seeded Philox4x64 raw stream with explicit float conversions."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = seed & _MASK64
        self.stream = stream & _MASK64
        self._bg = np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))
        self._buf = np.empty(0, dtype=np.uint64)
        self._pos = 0
        self._chunk = _BUFFER_MIN

    def child(self, *indices: int) -> "Rng":
        """Derive an independent stream keyed by the index path."""
        s = self.stream
        for i in indices:
            s = _splitmix64(s ^ _splitmix64((i & _MASK64) ^ 0xA5A5DEADBEEF5A5A))
        return Rng(self.seed, s)

    def _raw(self, n: int) -> np.ndarray:
        # Serve from the buffer; fetch large remainders in one call and grow
        # the buffer chunk gradually so short-lived streams stay cheap.
        out = np.empty(n, dtype=np.uint64)
        filled = 0
        while filled < n:
            if self._pos >= len(self._buf):
                need = n - filled
                if need >= self._chunk:
                    out[filled:] = self._bg.random_raw(need)
                    return out
                self._buf = self._bg.random_raw(self._chunk)
                self._pos = 0
                self._chunk = min(self._chunk * 4, _BUFFER_MAX)
            take = min(n - filled, len(self._buf) - self._pos)
            out[filled:filled + take] = self._buf[self._pos:self._pos + take]
            self._pos += take
            filled += take
        return out

    def next_u64(self) -> int:
        return int(self._raw(1)[0])

    def uniform(self) -> float:
        """One float in [0, 1)."""
        return float(self.next_u64() >> 11) * 2.0 ** -53

    def uniform01(self, n: int) -> np.ndarray:
        """n floats in [0, 1)."""
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("randbelow requires n >= 1")
        limit = (2 ** 64 // n) * n
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def normal(self, shape=None, mean: float = 0.0, std: float = 1.0) -> np.ndarray | float:
        """Standard Box-Muller normals scaled to N(mean, std^2)."""
        if std < 0:
            raise ValueError("std must be >= 0")
        scalar = shape is None
        dims = () if scalar else (tuple(shape) if not isinstance(shape, int) else (shape,))
        total = 1
        for d in dims:
            total *= int(d)
        pairs = (total + 1) // 2
        # u1 in (0, 1] keeps log finite; u2 in [0, 1).
        u1 = ((self._raw(pairs) >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * 2.0 ** -53
        u2 = (self._raw(pairs) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * math.pi) * u2
        z = np.empty(2 * pairs, dtype=np.float64)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        out = z[:total] * std + mean
        if scalar:
            return float(out[0])
        return out.reshape(dims)


def normal_sample(rng: Rng, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """Tensor of the given shape filled from N(mean, std^2) on rng's stream."""
    return rng.normal(tuple(shape), mean=mean, std=std)
