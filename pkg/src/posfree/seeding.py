"""Deterministic seed derivation (splitmix64 mixing of integer keys)."""

from __future__ import annotations

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive(*keys: int) -> int:
    """Hash a tuple of non-negative integers into one 64-bit seed."""
    h = 0x243F6A8885A308D3
    for k in keys:
        h = splitmix64(h ^ (int(k) & MASK64))
    return h


def seed32(seed: int) -> int:
    """Fold a seed into numba's 32-bit ``np.random.seed`` range."""
    s = splitmix64(int(seed) & MASK64)
    return (s ^ (s >> 32)) & 0xFFFFFFFF
