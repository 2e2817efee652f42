"""Deterministic seed derivation.

Every random stream in a run is derived from the master seed and a tuple of
integer keys, so evaluations can be reproduced in any order or on any worker.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# stream tags
RFF = 1
PROJECTION = 2
ASK = 3
EVAL = 4
RESTART = 5
EVAL_RFF = 6
KERNEL = 7
BASELINE = 8


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int) -> int:
    """Mix ``master`` with ``keys`` into a 64-bit seed."""
    h = splitmix64(int(master) & MASK64)
    for key in keys:
        h = splitmix64(h ^ (int(key) & MASK64))
    return h


def make_rng(master: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(master, *keys)))
