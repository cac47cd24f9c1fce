"""Deterministic, label-separated random streams."""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["seeded_rng", "label_key"]


def label_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode()).digest()[:8], "little")


def seeded_rng(seed: int, label: str = "") -> np.random.Generator:
    """PCG64 generator keyed by (seed, label); distinct labels give independent streams."""
    if int(seed) < 0:
        raise ValueError("seed must be nonnegative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), label_key(label)])))
