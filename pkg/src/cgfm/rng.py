"""Seed derivation.

Every random stream in a run is derived from one 64-bit root seed. A child
seed is obtained by folding each path label into the state with splitmix64::

    state = splitmix64(root)
    for label in path:
        state = splitmix64(state + splitmix64(key(label)))  (mod 2**64)

where ``key`` is the label itself for integers and its CRC-32 for strings.
Folding by addition rather than xor keeps a label whose hash equals the
current state from cancelling it.
The resulting 64-bit value seeds a PCG64 generator. Streams with different
paths are statistically independent; the same path always yields the same
stream.
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _key(label) -> int:
    if isinstance(label, str):
        return zlib.crc32(label.encode("utf-8"))
    return int(label) & MASK64


def derive_seed(seed: int, *path) -> int:
    state = splitmix64(int(seed) & MASK64)
    for label in path:
        state = splitmix64((state + splitmix64(_key(label))) & MASK64)
    return state


def stream(seed: int, *path) -> np.random.Generator:
    """Return an independent generator for ``path`` under root ``seed``."""
    return np.random.Generator(np.random.PCG64(derive_seed(seed, *path)))
