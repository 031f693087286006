"""Derive independent, reproducible random streams from one integer seed."""

import hashlib

import numpy as np


def derive_seed(seed: int, *labels) -> int:
    """Stable 64-bit seed for the stream named by ``labels`` under ``seed``."""
    text = "/".join([str(int(seed))] + [str(label) for label in labels])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


def rng_for(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))
