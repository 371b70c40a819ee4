"""Derivation of independent, reproducible random streams.

Every consumer of randomness asks for its own generator keyed by the
master seed plus a tuple of tags (round index, client id, purpose string).
Streams therefore never depend on the order in which other consumers ran.
"""
import hashlib

import numpy as np


def derive_seed(seed, *tags):
    """Hash ``seed`` and ``tags`` into a 64-bit integer seed."""
    h = hashlib.blake2b(digest_size=8)
    h.update(repr(int(seed)).encode())
    for tag in tags:
        h.update(b"\x1f")
        h.update(repr(tag).encode())
    return int.from_bytes(h.digest(), "little")


def rng_for(seed, *tags):
    return np.random.default_rng(derive_seed(seed, *tags))
