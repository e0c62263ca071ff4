"""Counter-based splitmix64 PRNG.

Every stochastic component (weight init, frame synthesis, pair sampling)
draws from this generator so runs are reproducible bit-for-bit across
platforms: the state path is pure 64-bit integer arithmetic and the
float conversion is exact IEEE.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64 = np.uint64


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


def mix64(value: int) -> int:
    """Scalar splitmix finalizer, used to derive child seeds."""
    return int(_mix(np.asarray([np.uint64(value & 0xFFFFFFFFFFFFFFFF)]))[0])


class Rng:
    """Seeded stream of uniforms/normals backed by splitmix64 counters."""

    def __init__(self, seed: int):
        self._seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self._counter = 0

    def spawn(self, key: int) -> "Rng":
        """Independent child stream; same (seed, key) always gives the same child."""
        return Rng(mix64(int(self._seed) ^ mix64(key * 2 + 1)))

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        return _mix(self._seed + idx * _GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1)."""
        return (self._raw(n) >> _U64(11)).astype(np.float64) * (2.0 ** -53)

    def uniform_open(self, n: int) -> np.ndarray:
        """n doubles in (0, 1], safe as log() arguments."""
        return ((self._raw(n) >> _U64(11)).astype(np.float64) + 1.0) * (2.0 ** -53)

    def normal(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        u1 = self.uniform_open(m)
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]

    def truncated_normal(self, n: int, std: float = 0.02, clip: float = 2.0) -> np.ndarray:
        """Normal(0, std) rejected outside clip standard deviations."""
        out = np.empty(0, dtype=np.float64)
        while out.size < n:
            z = self.normal(2 * (n - out.size) + 8)
            out = np.concatenate([out, z[np.abs(z) <= clip]])
        return out[:n] * std

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        """n ints uniform over [low, high)."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        return low + np.minimum(
            (self.uniform(n) * (high - low)).astype(np.int64), high - low - 1
        )

    def choice(self, low: int, high: int) -> int:
        return int(self.integers(low, high, 1)[0])

    def uniform_scalar(self, low: float = 0.0, high: float = 1.0) -> float:
        return float(low + (high - low) * self.uniform(1)[0])
