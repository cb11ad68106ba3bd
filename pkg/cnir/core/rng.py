"""Seed derivation for independent, reproducible random streams."""
import hashlib

import numpy as np


def derive_seed(seed: int, *keys: object) -> int:
    """Mix the global seed with stream keys into a 64-bit seed.

    Python's salted hash() is never used so streams survive process restarts.
    """
    digest = hashlib.sha256(str(seed).encode("utf-8"))
    for key in keys:
        digest.update(b"\x1f")
        digest.update(str(key).encode("utf-8"))
    return int.from_bytes(digest.digest()[:8], "little")


def stream(seed: int, *keys: object) -> np.random.Generator:
    """Independent generator for (seed, keys...)."""
    return np.random.default_rng(derive_seed(seed, *keys))
