"""Counter-based pseudo-random number generation.

Every stochastic component in this package (parameter init, data sampling,
corruption masks, batch selection) draws from a SplitMix64 stream keyed by a
64-bit seed. Streams are pure functions of (seed, counter), so any draw can be
reproduced without replaying the ones before it, and independent subsystems can
derive non-overlapping streams from one experiment seed.

The generator is the standard SplitMix64 finalizer:

    state += 0x9E3779B97F4A7C15
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    return z ^ (z >> 31)

Uniform doubles take the top 53 bits; normals use Box-Muller.
"""

from __future__ import annotations

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_U64_30 = np.uint64(30)
_U64_27 = np.uint64(27)
_U64_31 = np.uint64(31)
_U64_11 = np.uint64(11)
_DOUBLE_SCALE = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a plain Python int (mod 2**64)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, *tokens: str | int) -> int:
    """Derive a child seed from a parent seed and a label path.

    Used to give each subsystem (init of a named parameter, corruption mask of
    step t, ...) its own stream. FNV-1a over the token bytes, folded into the
    parent seed through the mixer, so distinct label paths decorrelate.
    """
    h = seed & _MASK64
    for tok in tokens:
        data = tok.encode() if isinstance(tok, str) else int(tok).to_bytes(8, "little", signed=False)
        for b in data:
            h = ((h ^ b) * 0x100000001B3) & _MASK64
        h = mix64(h)
    return h


class SplitMix64:
    """Sequential SplitMix64 stream with vectorized bulk draws."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return mix64(self._state)

    def _bulk_u64(self, n: int) -> np.ndarray:
        start = self._state
        self._state = (self._state + n * _GOLDEN) & _MASK64
        with np.errstate(over="ignore"):
            z = (np.uint64(start) + (np.arange(1, n + 1, dtype=np.uint64)) * np.uint64(_GOLDEN))
            z = (z ^ (z >> _U64_30)) * np.uint64(_MIX1)
            z = (z ^ (z >> _U64_27)) * np.uint64(_MIX2)
            z = z ^ (z >> _U64_31)
        return z

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0) -> np.ndarray | float:
        """Uniform draws in [low, high); scalar when shape is None."""
        if shape is None:
            u = (self.next_u64() >> 11) * _DOUBLE_SCALE
            return low + (high - low) * u
        n = int(np.prod(shape)) if shape != () else 1
        u = (self._bulk_u64(n) >> _U64_11).astype(np.float64) * _DOUBLE_SCALE
        return (low + (high - low) * u).reshape(shape)

    def normal(self, shape=None, mean: float = 0.0, std: float = 1.0) -> np.ndarray | float:
        """Gaussian draws via Box-Muller (pairs of uniforms)."""
        scalar = shape is None
        n = 1 if scalar else (int(np.prod(shape)) if shape != () else 1)
        m = (n + 1) // 2
        u1 = (self._bulk_u64(m) >> _U64_11).astype(np.float64) * _DOUBLE_SCALE
        u2 = (self._bulk_u64(m) >> _U64_11).astype(np.float64) * _DOUBLE_SCALE
        r = np.sqrt(-2.0 * np.log1p(-u1))  # 1-u1 in (0,1], log finite
        g = np.concatenate([r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)])[:n]
        g = mean + std * g
        if scalar:
            return float(g[0])
        return g.reshape(shape)

    def integers(self, n: int, upper: int) -> np.ndarray:
        """n integers uniform on [0, upper). Uses rejection-free modulo (upper is desk-scale small, bias < 2**-50)."""
        return (self._bulk_u64(n) % np.uint64(upper)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.next_u64() % (i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
