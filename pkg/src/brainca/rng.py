"""Portable counter-based random number generator.

The stream for a seed is fully defined here so that seeds mean the same thing
on every platform and numpy version:

* raw 64-bit words: ``word_k = splitmix64(seed + (k + 1) * 0x9E3779B97F4A7C15)``
  for ``k = 0, 1, 2, ...`` (all arithmetic modulo 2**64);
* uniforms on [0, 1): ``(word >> 11) * 2**-53``;
* standard normals: Box-Muller on consecutive uniform pairs ``(u1, u2)``,
  ``r = sqrt(-2 ln(1 - u1))``, emitting ``r cos(2 pi u2)`` then ``r sin(2 pi u2)``;
* integers on [0, n): ``min(floor(u * n), n - 1)``;
* child streams: ``spawn(key)`` seeds a new generator with
  ``splitmix64(seed ^ splitmix64(key + 0x632BE59BD9B4E019))``.
"""

from __future__ import annotations

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SPAWN = 0x632BE59BD9B4E019
_MASK = (1 << 64) - 1


def splitmix64(x: np.ndarray) -> np.ndarray:
    """Finalizer of SplitMix64 applied elementwise to a uint64 array."""
    z = np.asarray(x, dtype=np.uint64).copy()
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def _mix_int(x: int) -> int:
    return int(splitmix64(np.array([x & _MASK], dtype=np.uint64))[0])


class Rng:
    """Seeded stream of uniforms, normals and integers.

    The generator is a counter: ``counter`` words have been consumed so far.
    Two instances with the same ``(seed, counter)`` produce identical draws.
    """

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def spawn(self, *keys: int) -> "Rng":
        """Independent child stream keyed by integers; does not advance self."""
        s = self.seed
        for key in keys:
            s = _mix_int(s ^ _mix_int(int(key) + _SPAWN))
        return Rng(s)

    def words(self, n: int) -> np.ndarray:
        k = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return splitmix64(np.uint64(self.seed) + k * _GAMMA)

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        n = int(np.prod(size)) if size is not None else 1
        u = (self.words(n) >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(size)

    def normal(self, size=None, mean: float = 0.0, std: float = 1.0):
        n = int(np.prod(size)) if size is not None else 1
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log1p(-u1))
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        z = mean + std * z[:n]
        return float(z[0]) if size is None else z.reshape(size)

    def integers(self, n: int, size=None):
        """Uniform integers on [0, n)."""
        if n < 1:
            raise ValueError("integer range must be non-empty")
        u = self.uniform(1 if size is None else size)
        k = np.minimum(np.floor(u * n), n - 1).astype(np.int64)
        return int(k.ravel()[0]) if size is None else k

    def sample_without_replacement(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct values from range(n) by a partial Fisher-Yates shuffle."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} distinct items from {n}")
        pool = np.arange(n)
        if k == 0:
            return pool[:0]
        u = self.uniform(k)
        for j in range(k):
            r = j + min(int(u[j] * (n - j)), n - j - 1)
            pool[j], pool[r] = pool[r], pool[j]
        return pool[:k].copy()

    def choice(self, items, k: int) -> np.ndarray:
        items = np.asarray(items)
        return items[self.sample_without_replacement(len(items), k)]

    def categorical(self, probs) -> int:
        """One draw from a finite distribution given by ``probs``."""
        cdf = np.cumsum(probs)
        u = self.uniform() * cdf[-1]
        return int(min(np.searchsorted(cdf, u, side="right"), len(cdf) - 1))
