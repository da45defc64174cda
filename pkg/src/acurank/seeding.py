"""Deterministic seed derivation from a master seed and arbitrary labels."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Hash ``parts`` into a 64-bit seed.

    Stable across processes and Python versions (unlike ``hash()``), so adding
    a query never perturbs the seeds of existing ones.
    """
    digest = hashlib.blake2b("\x1f".join(map(str, parts)).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
