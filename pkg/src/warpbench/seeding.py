"""Stateless seed derivation.

Every stochastic step in the engine draws from a generator seeded by
``derive_seed(master, label, index)``, so results never depend on the order
in which users, trials or folds are processed.
"""
from __future__ import annotations

import hashlib
import struct

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_seed(master: int, label: str, index: int = 0) -> int:
    """Mix ``(master, label, index)`` into a 64-bit seed.

    The mix is a keyed BLAKE2b digest truncated to 8 bytes, which gives full
    avalanche between neighbouring inputs.
    """
    payload = struct.pack("<Qq", master & _MASK64, index) + label.encode("utf-8")
    digest = hashlib.blake2b(payload, digest_size=8, person=b"warpbench").digest()
    return int.from_bytes(digest, "little")


def rng_for(master: int, label: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, label, index))
