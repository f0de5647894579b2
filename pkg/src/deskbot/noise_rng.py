"""Deterministic sampling noise shared across implementations.

ddim_sample draws its Gaussians from this generator (never from numpy) so a
bridge server in any language reproduces the exact chunk for a given seed.
The construction is pinned:

  splitmix64        -> 64-bit stream
  uniform           u  = (z >> 11) * 2^-53            in [0, 1)
  Box-Muller pair   r  = sqrt(-2 ln(1 - u1)), a = 2 pi u2
                    z0 = r cos a, z1 = r sin a

normals(n) consumes exactly ceil(n/2) pairs per call; the unused half of an
odd final pair is discarded, not cached.
"""

from __future__ import annotations

import math

import numpy as np

_M64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class NoiseRng:
    """splitmix64 + Box-Muller; see module docstring for the exact pin."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = int(seed) & _M64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _M64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _M64
        z = ((z ^ (z >> 27)) * _MIX2) & _M64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * 2.0 ** -53

    def normal_pair(self) -> tuple[float, float]:
        u1 = 1.0 - self.uniform()   # (0, 1]: keeps log() finite
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        a = 2.0 * math.pi * u2
        return r * math.cos(a), r * math.sin(a)

    def normals(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        i = 0
        while i < n:
            z0, z1 = self.normal_pair()
            out[i] = z0
            if i + 1 < n:
                out[i + 1] = z1
            i += 2
        return out


def derive_seed(base: int, *parts: int) -> int:
    """Deterministic per-(window, episode, ...) seed in [0, 2^53): mixes the
    parts through the same splitmix64 core. Stays within exact-integer range
    of an IEEE double so seeds survive JSON on any platform."""
    state = int(base) & _M64
    for p in parts:
        state = (state ^ ((int(p) & _M64) * _MIX2 & _M64)) & _M64
        state = (state + _GAMMA) & _M64
        z = state
        z = ((z ^ (z >> 30)) * _MIX1) & _M64
        z = ((z ^ (z >> 27)) * _MIX2) & _M64
        state = z ^ (z >> 31)
    return state >> 11
