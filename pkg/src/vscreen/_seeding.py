"""Splittable seed derivation shared by every stage."""

from __future__ import annotations

import hashlib

import numpy as np


def _key_to_int(key: int | str) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"seed keys must be non-negative, got {key}")
        return int(key)
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(master: int, *keys: int | str) -> int:
    """Return a 63-bit seed for the stream identified by ``keys`` under ``master``.

    The derivation is counter based (``SeedSequence`` spawn keys), so no global
    RNG state is consulted and sibling streams are independent.
    """
    ss = np.random.SeedSequence(_key_to_int(master), spawn_key=tuple(_key_to_int(k) for k in keys))
    state = ss.generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def rng(master: int, *keys: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))
