"""Clipping, sensitivity, Gaussian noise and noise-scale schedules."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DegenerateSensitivityError
from .nn.types import Gradient, LayerGradient, PerExampleGradient
from .nn.utils import global_norm, stack_gradients
from .types import SchedulePolicy, SensitivityMode

__all__ = [
    "NoiseSchedule",
    "PrivacyParams",
    "clip_per_example",
    "clip_stack",
    "clip_update",
    "exponential_gamma",
    "gaussian_noise",
    "l2_max_sensitivity",
    "linear_gamma",
    "min_epsilon_for_sigma",
    "noise_scale_at",
    "resilience_seed_guideline",
    "sensitivity_for",
    "stack_layer_norms",
    "staircase_gamma",
]

logger = logging.getLogger(__name__)

DEFAULT_SIGMA_FLOOR = 0.5
DEGENERATE_SENSITIVITY_FRACTION = 1e-6


@dataclass(frozen=True)
class NoiseSchedule:
    """A noise-scale policy.

    ``gamma`` is the policy's decay rate (for ``cyclic``, the number of cycles
    over ``total_rounds``). ``step_size`` is used by ``staircase`` only.
    ``total_rounds`` of ``None`` leaves the schedule unbounded, which only
    ``fixed`` allows.
    """

    initial_sigma: float
    policy: SchedulePolicy = SchedulePolicy.FIXED
    gamma: float = 0.0
    step_size: int = 1
    total_rounds: Optional[int] = None
    sigma_floor: float = DEFAULT_SIGMA_FLOOR

    def __post_init__(self) -> None:
        if self.initial_sigma <= 0:
            raise ValueError(f"initial sigma must be positive, got {self.initial_sigma}")
        if self.sigma_floor < 0:
            raise ValueError(f"sigma floor must be non-negative, got {self.sigma_floor}")
        if self.sigma_floor > self.initial_sigma:
            raise ValueError(
                f"sigma floor {self.sigma_floor} exceeds initial sigma {self.initial_sigma}"
            )
        if self.policy is not SchedulePolicy.FIXED:
            if self.total_rounds is None or self.total_rounds < 1:
                raise ValueError(f"{self.policy.value} schedule needs total_rounds >= 1")
            if self.gamma <= 0:
                raise ValueError(f"{self.policy.value} schedule needs gamma > 0")
        if self.step_size < 1:
            raise ValueError(f"step size must be a positive integer, got {self.step_size}")

    @property
    def cycle_length(self) -> int:
        """Rounds between cyclic restarts, ``ceil(T / gamma)``."""
        if self.total_rounds is None:
            raise ValueError("cycle length needs total_rounds")
        return max(1, math.ceil(self.total_rounds / self.gamma))


@dataclass(frozen=True)
class PrivacyParams:
    """Clipping bound, noise scale, delta and the schedule driving sigma."""

    clip_bound: float
    noise_scale: float
    delta: float = 1e-5
    schedule: NoiseSchedule = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.clip_bound <= 0:
            raise ValueError(f"clip bound C must be positive, got {self.clip_bound}")
        if self.noise_scale <= 0:
            raise ValueError(f"noise scale must be positive, got {self.noise_scale}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.schedule is None:
            floor = min(DEFAULT_SIGMA_FLOOR, self.noise_scale)
            object.__setattr__(
                self, "schedule", NoiseSchedule(self.noise_scale, sigma_floor=floor)
            )
        elif self.schedule.initial_sigma != self.noise_scale:
            raise ValueError(
                f"schedule starts at {self.schedule.initial_sigma}, "
                f"noise scale is {self.noise_scale}"
            )

    def sigma_at(self, t: int) -> float:
        """Noise scale of round ``t``; rounds past the schedule reuse its last value."""
        total = self.schedule.total_rounds
        if total is not None and t >= total:
            t = total - 1
        return noise_scale_at(self.schedule, t)


# ----------------------------------------------------------------------
# Clipping and sensitivity
# ----------------------------------------------------------------------


def _clip_factor(norms: np.ndarray, clip_bound: float) -> np.ndarray:
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms > clip_bound, clip_bound / safe, 1.0)


def clip_per_example(grad: PerExampleGradient, C: float) -> PerExampleGradient:
    """Scale each layer by ``min(1, C / ||layer||)``; weights and bias share one norm."""
    if C <= 0:
        raise ValueError(f"clip bound must be positive, got {C}")
    clipped = clip_stack(stack_gradients([grad]), C)
    return PerExampleGradient(
        tuple(LayerGradient(g.weights[0], g.bias[0]) for g in clipped), grad.example_index
    )


def stack_layer_norms(stack: Gradient) -> np.ndarray:
    """Per-layer l2 norms of a stacked gradient, shape ``(examples, layers)``."""
    columns = []
    for g in stack:
        n = g.weights.shape[0]
        columns.append(
            np.sqrt(
                np.sum(g.weights.reshape(n, -1) ** 2, axis=1)
                + np.sum(g.bias.reshape(n, -1) ** 2, axis=1)
            )
        )
    return np.stack(columns, axis=1)


def clip_stack(stack: Gradient, C: float) -> Gradient:
    """Per-layer clipping of every example in a stacked gradient."""
    if C <= 0:
        raise ValueError(f"clip bound must be positive, got {C}")
    factors = _clip_factor(stack_layer_norms(stack), C)
    out = []
    for m, g in enumerate(stack):
        f = factors[:, m]
        out.append(
            LayerGradient(
                g.weights * f.reshape((-1,) + (1,) * (g.weights.ndim - 1)),
                g.bias * f.reshape((-1,) + (1,) * (g.bias.ndim - 1)),
            )
        )
    return tuple(out)


def l2_max_sensitivity(
    clipped_batch: Union[Sequence[PerExampleGradient], Gradient], C: float
) -> float:
    """``min(C, largest per-layer norm)`` over an already clipped batch.

    Accepts either a list of per-example gradients or a stacked gradient.

    Raises
    ------
    DegenerateSensitivityError
        If every gradient in the batch is zero.
    """
    if len(clipped_batch) == 0:
        raise ValueError("sensitivity needs a non-empty batch")
    if isinstance(clipped_batch[0], PerExampleGradient):
        stack = stack_gradients(list(clipped_batch))  # type: ignore[arg-type]
    else:
        stack = clipped_batch  # type: ignore[assignment]
    largest = float(np.max(stack_layer_norms(stack)))
    if largest == 0.0:
        raise DegenerateSensitivityError("all clipped gradients in the batch are zero")
    return min(C, largest)


def sensitivity_for(
    mode: SensitivityMode, clipped: Gradient, C: float
) -> float:
    """Sensitivity of one iteration, substituting ``1e-6 * C`` for an all-zero batch."""
    if mode is SensitivityMode.FIXED_CLIP:
        return C
    try:
        return l2_max_sensitivity(clipped, C)
    except DegenerateSensitivityError:
        logger.warning("All-zero clipped batch; using S = %g", DEGENERATE_SENSITIVITY_FRACTION * C)
        return DEGENERATE_SENSITIVITY_FRACTION * C


def clip_update(update: Gradient, C: float) -> Gradient:
    """Clip a whole update to flat l2 norm ``C``; updates within the bound pass unchanged."""
    if C <= 0:
        raise ValueError(f"clip bound must be positive, got {C}")
    norm = global_norm(update)
    if norm <= C:
        return update
    return tuple(g.scaled(C / norm) for g in update)


# ----------------------------------------------------------------------
# Gaussian mechanism
# ----------------------------------------------------------------------


def gaussian_noise(
    shape: Union[int, Tuple[int, ...]], sigma: float, S: float, rng: np.random.Generator
) -> np.ndarray:
    """I.i.d. draws from ``N(0, sigma^2 S^2)``."""
    if sigma <= 0 or S <= 0:
        logger.error("Invalid noise parameters sigma=%s S=%s", sigma, S)
        raise ValueError(f"sigma and S must be positive, got sigma={sigma}, S={S}")
    return rng.normal(0.0, sigma * S, size=shape)


def min_epsilon_for_sigma(sigma: float, delta: float) -> float:
    """Smallest epsilon a single Gaussian release at scale ``sigma`` certifies."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    return math.sqrt(2.0 * math.log(1.25 / delta)) / sigma


def resilience_seed_guideline(C: float, sigma: float, dynamic_sensitivity: float) -> float:
    """Starting noise scale ``C * sigma / S`` that keeps l2-max noise at the fixed-clip level."""
    if dynamic_sensitivity <= 0:
        raise ValueError("dynamic sensitivity must be positive")
    return C * sigma / dynamic_sensitivity


# ----------------------------------------------------------------------
# Schedules
# ----------------------------------------------------------------------


def noise_scale_at(schedule: NoiseSchedule, t: int) -> float:
    """Noise scale of round ``t``, floored at ``schedule.sigma_floor``."""
    if t < 0:
        raise ValueError(f"round index must be non-negative, got {t}")
    if schedule.total_rounds is not None and t >= schedule.total_rounds:
        logger.error("Round %d outside schedule of %d rounds", t, schedule.total_rounds)
        raise ValueError(f"round {t} is outside a schedule of {schedule.total_rounds} rounds")

    s0 = schedule.initial_sigma
    policy = schedule.policy
    if policy is SchedulePolicy.FIXED:
        return s0
    if policy is SchedulePolicy.LINEAR:
        sigma = s0 * (1.0 - schedule.gamma * t)
    elif policy is SchedulePolicy.STAIRCASE:
        sigma = s0 * (1.0 - schedule.gamma * (t // schedule.step_size))
    elif policy is SchedulePolicy.EXPONENTIAL:
        sigma = s0 * math.exp(-schedule.gamma * t)
    elif policy is SchedulePolicy.CYCLIC:
        period = schedule.cycle_length
        sigma = s0 / 2.0 * (math.cos(math.pi * (t % period) / period) + 1.0)
    else:
        raise ValueError(f"Unsupported schedule policy: {policy}")
    return max(sigma, schedule.sigma_floor)


def _check_endpoints(initial_sigma: float, final_sigma: float, total_rounds: int) -> None:
    if not 0 < final_sigma < initial_sigma:
        raise ValueError(
            f"final sigma must lie in (0, {initial_sigma}), got {final_sigma}"
        )
    if total_rounds < 2:
        raise ValueError("a decaying schedule needs at least two rounds")


def linear_gamma(initial_sigma: float, final_sigma: float, total_rounds: int) -> float:
    """Rate for which the linear policy reaches ``final_sigma`` at round ``T - 1``."""
    _check_endpoints(initial_sigma, final_sigma, total_rounds)
    return (1.0 - final_sigma / initial_sigma) / (total_rounds - 1)


def exponential_gamma(initial_sigma: float, final_sigma: float, total_rounds: int) -> float:
    _check_endpoints(initial_sigma, final_sigma, total_rounds)
    return math.log(initial_sigma / final_sigma) / (total_rounds - 1)


def staircase_gamma(
    initial_sigma: float, final_sigma: float, total_rounds: int, step_size: int
) -> float:
    _check_endpoints(initial_sigma, final_sigma, total_rounds)
    steps = (total_rounds - 1) // step_size
    if steps < 1:
        raise ValueError(f"step size {step_size} leaves no decay within {total_rounds} rounds")
    return (1.0 - final_sigma / initial_sigma) / steps
