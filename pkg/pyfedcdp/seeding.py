"""Hierarchical random-stream derivation.

Every generator in an experiment is ``SeedSequence(master_seed,
spawn_key=(stream, *path))`` where ``path`` is, for example, ``(round,)`` for
client sampling or ``(round, client_id)`` for a client's local batches. Streams
never share state, so switching noise off leaves batch sampling untouched.
"""
from __future__ import annotations

import numpy as np

from .types import Stream

__all__ = ["derive_rng", "derive_seed"]


def derive_seed(master_seed: int, stream: Stream, *path: int) -> np.random.SeedSequence:
    """Return the seed sequence for ``stream`` at ``path``."""
    if master_seed < 0:
        raise ValueError(f"master_seed must be non-negative, got {master_seed}")
    return np.random.SeedSequence(master_seed, spawn_key=(int(stream), *(int(p) for p in path)))


def derive_rng(master_seed: int, stream: Stream, *path: int) -> np.random.Generator:
    """Return a fresh generator for ``stream`` at ``path``."""
    return np.random.default_rng(derive_seed(master_seed, stream, *path))
