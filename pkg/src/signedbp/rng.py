"""Counter-based substream keying.

Every random draw in the toolkit owns a substream identified by a tuple of
integers (master seed plus a structured key such as block index, epoch and
draw index).  Streams are derived by hashing the key into a Philox key, so
any draw can be regenerated bit-for-bit in isolation and draws can be
evaluated concurrently without a shared sequential stream.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def key_hash(*key: int) -> int:
    """Mix a tuple of integers into a single 64-bit stream key."""
    h = 0x243F6A8885A308D3
    for part in key:
        h = _splitmix64((h ^ (int(part) & _MASK)) & _MASK)
    return h


def stream(*key: int) -> np.random.Generator:
    """Return the reproducible generator owned by ``key``."""
    return np.random.Generator(np.random.Philox(key=key_hash(*key)))
