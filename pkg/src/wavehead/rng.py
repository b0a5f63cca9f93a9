"""Seeded randomness.

Every consumer draws from its own stream, derived from ``(base_seed, label)``
with a splitmix64 expander.  The streams are backed by numpy's SFC64, a
64-bit shift/rotate generator whose output is identical across platforms.
"""

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(x):
    """One splitmix64 step; returns ``(new_state, output)``."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return x, z ^ (z >> 31)


def _fnv1a(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & _MASK
    return h


def derive_seed(base_seed: int, *labels) -> int:
    """Mix a base seed with any number of string/int labels into a 64-bit seed."""
    state, out = splitmix64(int(base_seed) & _MASK)
    for label in labels:
        state = (state ^ _fnv1a(str(label).encode("utf-8"))) & _MASK
        state, out = splitmix64(state)
    return out


def stream(base_seed: int, *labels) -> np.random.Generator:
    """Independent generator for ``(base_seed, *labels)``."""
    return np.random.Generator(np.random.SFC64(derive_seed(base_seed, *labels)))
