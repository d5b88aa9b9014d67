"""Deterministic seed derivation.

Every random stream in the package is derived from a root seed through a
splitmix64-style mixing chain so that any single environment instance,
training run or landscape cell can be reproduced in isolation.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _token(part: int | str) -> int:
    if isinstance(part, str):
        digest = hashlib.blake2b(part.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    return int(part) & MASK64


def derive_seed(*parts: int | str) -> int:
    """Mix an ordered sequence of ints/strings into one 64-bit seed."""
    h = 0x6A09E667F3BCC908
    for part in parts:
        h = splitmix64(h ^ _token(part))
    return h


def make_rng(*parts: int | str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(*parts)))


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def rng_from_state(state: dict) -> np.random.Generator:
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)
