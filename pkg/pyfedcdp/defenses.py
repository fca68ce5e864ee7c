"""Gradient pruning and additive-noise baselines applied to client updates.

Each operation accepts a layered tensor or a flat vector and returns the same
kind. Coordinates are ordered as in :func:`pyfedcdp.nn.utils.flatten`.
"""
from __future__ import annotations

import logging
import math
from typing import Callable, TypeVar, Union

import numpy as np

from .nn.types import Gradient
from .nn.utils import flatten, unflatten

__all__ = ["additive_random_noise", "prune_random_dssgd", "prune_threshold"]

logger = logging.getLogger(__name__)

Update = TypeVar("Update", Gradient, np.ndarray)


def _on_vector(update: Union[Gradient, np.ndarray], fn: Callable[[np.ndarray], np.ndarray]):
    if isinstance(update, np.ndarray):
        return fn(np.asarray(update, dtype=np.float64).copy())
    return unflatten(fn(flatten(update)), update)


def prune_threshold(update: Update, percent: float) -> Update:
    """Zero the ``percent``% smallest-magnitude coordinates; ties fall to lower indices first."""
    if not 0 <= percent < 100:
        raise ValueError(f"prune percentage must lie in [0, 100), got {percent}")

    def prune(v: np.ndarray) -> np.ndarray:
        count = int(math.floor(percent / 100.0 * v.size))
        if count:
            order = np.argsort(np.abs(v), kind="stable")
            v[order[:count]] = 0.0
        return v

    return _on_vector(update, prune)


def prune_random_dssgd(
    update: Update, keep_fraction: float, threshold: float, rng: np.random.Generator
) -> Update:
    """Keep a random ``keep_fraction`` of the coordinates with ``|v| > threshold``."""
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"keep fraction must lie in (0, 1], got {keep_fraction}")

    def select(v: np.ndarray) -> np.ndarray:
        eligible = np.flatnonzero(np.abs(v) > threshold)
        count = int(math.ceil(keep_fraction * eligible.size))
        kept = rng.choice(eligible, size=count, replace=False) if count else eligible[:0]
        out = np.zeros_like(v)
        out[kept] = v[kept]
        logger.debug("DSSGD kept %d of %d eligible coordinates", count, eligible.size)
        return out

    return _on_vector(update, select)


def additive_random_noise(update: Update, variance: float, rng: np.random.Generator) -> Update:
    """Add ``N(0, variance)`` to every coordinate. Not calibrated to any privacy guarantee."""
    if variance < 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    if variance == 0:
        return _on_vector(update, lambda v: v)
    return _on_vector(update, lambda v: v + rng.normal(0.0, math.sqrt(variance), size=v.shape))
