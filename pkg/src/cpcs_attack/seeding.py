"""Deterministic random streams keyed by (master seed, run index, stream name)."""

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode()).digest()[:8], "little")


def derive_seed(master_seed: int, run_index: int = 0, stream: str = "main") -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(run_index), _name_key(stream)])


def rng_for(master_seed: int, run_index: int = 0, stream: str = "main") -> np.random.Generator:
    """Independent generator; adding a new stream name never perturbs existing ones."""
    return np.random.default_rng(derive_seed(master_seed, run_index, stream))
