"""Deterministic seed derivation.

One top-level seed fans out to every stochastic site (init, batching,
imposters, crops, synthesis) through labeled hashing, so independent
streams never collide and any single epoch can be replayed without
serializing RNG state.
"""

import hashlib

import numpy as np

__all__ = ["derive_seed", "rng_for"]

_MASK64 = (1 << 64) - 1


def derive_seed(master: int, label: str) -> int:
    """Map (master seed, label) to a stable 64-bit seed.

    Labels are free-form strings like "init" or "imposters/epoch0003/batch0012".
    Distinct labels give independent streams; the mapping is fixed forever
    (sha256), so checkpoints stay replayable across versions.
    """
    digest = hashlib.sha256(f"{master & _MASK64:020d}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_for(master: int, label: str) -> np.random.Generator:
    """Fresh Generator for one labeled stochastic site."""
    return np.random.default_rng(derive_seed(master, label))
