"""Deterministic seed fan-out.

Every source of randomness in the pipeline is derived from a single global
seed through SHA-256, so runs are reproducible regardless of platform,
parallelism, or execution order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: object) -> int:
    """Derive a 63-bit seed from an ordered tuple of parts.

    Parts are joined with a separator that cannot appear in str() output of
    the values we use (ints, short identifiers), so distinct tuples map to
    distinct digests.
    """
    material = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(material.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def rng_for(*parts: object) -> np.random.Generator:
    """Generator seeded by derive_seed(*parts)."""
    return np.random.default_rng(derive_seed(*parts))


def unit_float(*parts: object) -> float:
    """Deterministic uniform draw in [0, 1) keyed by the parts."""
    return derive_seed(*parts) / float(1 << 63)
