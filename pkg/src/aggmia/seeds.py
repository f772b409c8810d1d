"""Deterministic seed derivation.

Every stochastic component takes one root seed; sub-streams are derived by
hashing the root together with string/int labels (component name, user id,
sample index, ...). SHA-256 keeps the mapping stable across platforms and
Python versions, unlike the builtin hash().
"""

import hashlib

import numpy as np

__all__ = ["derive_seed", "rng_for"]


def derive_seed(root: int, *labels) -> int:
    """Derive a 64-bit child seed from a root seed and a label path."""
    h = hashlib.sha256()
    h.update(str(int(root)).encode())
    for lab in labels:
        h.update(b"/")
        h.update(str(lab).encode())
    return int.from_bytes(h.digest()[:8], "little")


def rng_for(root: int, *labels) -> np.random.Generator:
    """A numpy Generator seeded from the derived child seed."""
    return np.random.default_rng(derive_seed(root, *labels))
