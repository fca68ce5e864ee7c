"""Gradient-matching reconstruction attacks and their capture points."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import minimize

from .errors import NumericError, ShapeError
from .federation import (
    AlgorithmVariant,
    CaptureHooks,
    ClientDataset,
    FederationConfig,
    train_client,
)
from .nn.model import input_gradient_of_match_loss, match_loss
from .nn.types import Example, Gradient, ModelParams, PerExampleGradient
from .nn.utils import check_congruent, scale
from .seeding import derive_rng
from .types import AttackOptimizer, AttackSummaryRow, AttackSurface, SeedKind, Stream

__all__ = [
    "AttackConfig",
    "AttackReport",
    "CampaignReport",
    "GradientCapture",
    "attack_campaign",
    "capture_target",
    "init_seed",
    "reconstruct",
    "rmse",
    "run_campaign",
    "update_to_gradient",
]

logger = logging.getLogger(__name__)

PATTERN_PERIOD = 4
_MAX_BACKTRACKS = 40
_STEP_GROWTH = 2.0


@dataclass(frozen=True)
class AttackConfig:
    """How the adversary attacks and how success is scored."""

    surface: AttackSurface = AttackSurface.TYPE2_PER_EXAMPLE_GRADIENT
    seed_kind: SeedKind = SeedKind.PATTERNED
    max_iterations: int = 300
    attack_lr: float = 0.05
    success_rmse: float = 0.1
    loss_tolerance: float = 1e-8
    optimizer: AttackOptimizer = AttackOptimizer.GRADIENT_DESCENT
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be at least 1, got {self.max_iterations}")
        if self.success_rmse <= 0:
            raise ValueError(f"success_rmse must be positive, got {self.success_rmse}")
        if self.attack_lr <= 0:
            raise ValueError(f"attack_lr must be positive, got {self.attack_lr}")
        if self.loss_tolerance < 0:
            raise ValueError("loss_tolerance must be non-negative")


@dataclass
class AttackReport:
    """Outcome of attacking one victim."""

    resilient: bool
    recon_distance: float
    iterations_used: int
    per_iteration_loss: List[float] = field(default_factory=list)
    reconstruction: Optional[np.ndarray] = field(default=None, compare=False, repr=False)


@dataclass
class CampaignReport:
    """Per-victim reports of one campaign and their aggregates."""

    surface: AttackSurface
    algorithm: str
    reports: List[AttackReport]

    @property
    def asr(self) -> float:
        if not self.reports:
            return 0.0
        return sum(not r.resilient for r in self.reports) / len(self.reports)

    @property
    def mean_distance(self) -> float:
        return float(np.mean([r.recon_distance for r in self.reports])) if self.reports else 0.0

    @property
    def mean_iterations(self) -> float:
        return float(np.mean([r.iterations_used for r in self.reports])) if self.reports else 0.0

    def summary(self) -> AttackSummaryRow:
        return {
            "surface": self.surface.value,
            "algorithm": self.algorithm,
            "asr": self.asr,
            "mean_distance": self.mean_distance,
            "mean_iterations": self.mean_iterations,
        }


# ----------------------------------------------------------------------
# Seeds and scoring
# ----------------------------------------------------------------------


def init_seed(
    kind: SeedKind,
    shape: Union[int, Tuple[int, ...]],
    rng: Optional[np.random.Generator] = None,
    *,
    label: int = 0,
) -> Example:
    """Dummy input for the attack.

    ``random`` draws uniform ``[0, 1]`` features. ``patterned`` tiles a fixed
    ``4 x 4`` ramp over the last two axes (a ``0, 1/3, 2/3, 1`` ramp for flat
    inputs) and ignores ``rng``.
    """
    dims = (shape,) if isinstance(shape, int) else tuple(shape)
    size = int(np.prod(dims))
    if kind is SeedKind.RANDOM:
        if rng is None:
            raise ValueError("a random seed needs a generator")
        return Example(rng.uniform(0.0, 1.0, size), label)
    if kind is SeedKind.PATTERNED:
        k = PATTERN_PERIOD
        if len(dims) >= 2:
            rows, cols = np.indices(dims[-2:])
            tile = ((rows % k) + (cols % k)) / (2.0 * (k - 1))
            features = np.broadcast_to(tile, dims).reshape(-1)
        else:
            features = (np.arange(size) % k) / (k - 1)
        return Example(np.array(features, dtype=np.float64), label)
    raise ValueError(f"Unsupported seed kind: {kind}")


def rmse(x: Union[Example, np.ndarray], x_rec: Union[Example, np.ndarray]) -> float:
    """Root mean squared per-feature difference."""
    a = np.asarray(x.features if isinstance(x, Example) else x, dtype=np.float64).reshape(-1)
    b = np.asarray(
        x_rec.features if isinstance(x_rec, Example) else x_rec, dtype=np.float64
    ).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"cannot compare {a.size} features with {b.size}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


# ----------------------------------------------------------------------
# Capture
# ----------------------------------------------------------------------


class GradientCapture:
    """Records what an adversary sees of one victim client.

    The victim example is the first example of the batch at ``step``; the
    same example is scored for every surface.
    """

    def __init__(self, client_id: int, *, round_index: int = 0, step: int = 0) -> None:
        self.client_id = client_id
        self.round_index = round_index
        self.step = step
        self.victim_index: Optional[int] = None
        self._seen: Dict[AttackSurface, Gradient] = {}

    def hooks(self) -> CaptureHooks:
        return CaptureHooks(type0=self._on_type0, type1=self._on_type1, type2=self._on_type2)

    def _matches(self, client_id: int, round_index: int) -> bool:
        return client_id == self.client_id and round_index == self.round_index

    def _on_type2(
        self, client_id: int, round_index: int, step: int, gradients: List[PerExampleGradient]
    ) -> None:
        if self._matches(client_id, round_index) and step == self.step and gradients:
            self.victim_index = gradients[0].example_index
            self._seen[AttackSurface.TYPE2_PER_EXAMPLE_GRADIENT] = gradients[0].per_layer

    def _on_type1(self, client_id: int, round_index: int, update: Gradient) -> None:
        if self._matches(client_id, round_index):
            self._seen[AttackSurface.TYPE1_CLIENT_POST_TRAINING_UPDATE] = update

    def _on_type0(self, client_id: int, round_index: int, update: Gradient) -> None:
        if self._matches(client_id, round_index):
            self._seen[AttackSurface.TYPE0_SERVER_SHARED_UPDATE] = update

    def seen(self, surface: AttackSurface) -> Optional[Gradient]:
        return self._seen.get(surface)


def capture_target(surface: AttackSurface, capture: GradientCapture) -> Gradient:
    """The tensor the adversary observed at ``surface``."""
    target = capture.seen(surface)
    if target is None:
        logger.error("Nothing captured at %s for client %d", surface.value, capture.client_id)
        raise ValueError(f"no {surface.value} capture for client {capture.client_id}")
    return target


def update_to_gradient(delta: Gradient, learning_rate: float, local_iterations: int) -> Gradient:
    """Average-gradient estimate ``-ΔW / (eta * L)`` of a local update."""
    if learning_rate <= 0 or local_iterations < 1:
        raise ValueError("an update can only be inverted with eta > 0 and L >= 1")
    return scale(delta, -1.0 / (learning_rate * local_iterations))


# ----------------------------------------------------------------------
# Reconstruction
# ----------------------------------------------------------------------


def _objective(model: ModelParams, target: Gradient, label: int, x: np.ndarray) -> float:
    try:
        return match_loss(model, target, Example(x, label))
    except NumericError:
        return math.inf


def _descend(
    model: ModelParams, target: Gradient, label: int, x: np.ndarray, loss: float, cfg: AttackConfig
) -> Tuple[np.ndarray, List[float], int, bool]:
    """Projected gradient descent with backtracking; only decreases are accepted."""
    losses = [loss]
    step = cfg.attack_lr
    iterations = 0
    while iterations < cfg.max_iterations and loss >= cfg.loss_tolerance:
        iterations += 1
        try:
            grad = input_gradient_of_match_loss(model, target, Example(x, label))
        except NumericError as err:
            logger.debug("Attack diverged at iteration %d: %s", iterations, err)
            return x, losses, iterations, True
        if not np.all(np.isfinite(grad)):
            return x, losses, iterations, True

        trial = step
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            candidate = np.clip(x - trial * grad, 0.0, 1.0)
            candidate_loss = _objective(model, target, label, candidate)
            if math.isfinite(candidate_loss) and candidate_loss < loss:
                accepted = True
                break
            trial *= 0.5
        if not accepted:
            logger.debug("Line search stalled at iteration %d, loss %.3e", iterations, loss)
            break
        x, loss = candidate, candidate_loss
        losses.append(loss)
        step = trial * _STEP_GROWTH
    return x, losses, iterations, False


def _lbfgs(
    model: ModelParams, target: Gradient, label: int, x: np.ndarray, loss: float, cfg: AttackConfig
) -> Tuple[np.ndarray, List[float], int, bool]:
    losses = [loss]
    if loss < cfg.loss_tolerance:
        return x, losses, 0, False

    def fun(v: np.ndarray) -> Tuple[float, np.ndarray]:
        example = Example(v, label)
        return (
            match_loss(model, target, example),
            input_gradient_of_match_loss(model, target, example),
        )

    try:
        result = minimize(
            fun,
            x,
            jac=True,
            method="L-BFGS-B",
            bounds=[(0.0, 1.0)] * x.size,
            callback=lambda xk: losses.append(_objective(model, target, label, xk)),
            options={"maxiter": cfg.max_iterations},
        )
    except NumericError as err:
        logger.debug("L-BFGS diverged: %s", err)
        return x, losses, cfg.max_iterations, True
    if not math.isfinite(float(result.fun)):
        return x, losses, cfg.max_iterations, True
    return np.clip(result.x, 0.0, 1.0), losses, int(result.nit), False


def reconstruct(
    model: ModelParams,
    target_grad: Gradient,
    cfg: AttackConfig,
    *,
    victim: Example,
    seed: Optional[Example] = None,
) -> AttackReport:
    """Optimize a dummy input until its gradient matches ``target_grad``.

    Parameters
    ----------
    model
        The model the target gradient was computed on.
    target_grad
        The observed layered tensor.
    cfg
        Attack settings.
    victim
        The true example. Its label is given to the attacker; its features are
        used only to score the result.
    seed
        Starting point; defaults to :func:`init_seed` of ``cfg.seed_kind``.

    Returns
    -------
    AttackReport
        ``resilient`` is true unless the reconstruction is within
        ``cfg.success_rmse`` of the victim.
    """
    check_congruent(model, target_grad)
    if np.size(victim.features) != model.input_dim:
        raise ShapeError(
            f"victim has {np.size(victim.features)} features, model expects {model.input_dim}"
        )
    label = victim.label
    if seed is None:
        seed = init_seed(
            cfg.seed_kind, model.input_dim, derive_rng(cfg.seed, Stream.ATTACK), label=label
        )
    x = np.clip(np.asarray(seed.features, dtype=np.float64), 0.0, 1.0)
    loss = _objective(model, target_grad, label, x)

    if not math.isfinite(loss):
        diverged, losses, iterations = True, [], cfg.max_iterations
    else:
        optimize = _lbfgs if cfg.optimizer is AttackOptimizer.LBFGS else _descend
        x, losses, iterations, diverged = optimize(model, target_grad, label, x, loss, cfg)

    distance = rmse(victim, x)
    if diverged:
        return AttackReport(True, distance, cfg.max_iterations, losses, x)
    return AttackReport(distance >= cfg.success_rmse, distance, iterations, losses, x)


# ----------------------------------------------------------------------
# Campaigns
# ----------------------------------------------------------------------


def run_campaign(
    model: ModelParams,
    targets: Sequence[Tuple[Example, Gradient]],
    cfg: AttackConfig,
    *,
    seeds: Optional[Sequence[Example]] = None,
    algorithm: str = "",
    max_workers: int = 1,
) -> CampaignReport:
    """Attack each ``(victim, target)`` pair independently."""
    if not targets:
        raise ValueError("a campaign needs at least one victim")
    if seeds is not None and len(seeds) != len(targets):
        raise ValueError("one seed per victim is required")

    def attack_one(index: int) -> AttackReport:
        victim, target = targets[index]
        seed = seeds[index] if seeds is not None else init_seed(
            cfg.seed_kind,
            model.input_dim,
            derive_rng(cfg.seed, Stream.ATTACK, index),
            label=victim.label,
        )
        return reconstruct(model, target, cfg, victim=victim, seed=seed)

    indices = range(len(targets))
    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            reports = list(pool.map(attack_one, indices))
    else:
        reports = [attack_one(i) for i in indices]
    return CampaignReport(cfg.surface, algorithm, reports)


def attack_campaign(
    variant: AlgorithmVariant,
    n_victims: int,
    cfg: AttackConfig,
    *,
    model: ModelParams,
    clients: Sequence[ClientDataset],
    federation: FederationConfig,
    max_workers: int = 1,
) -> CampaignReport:
    """Simulate first-round training of ``n_victims`` clients under ``variant`` and attack each.

    Victim ``v`` is client ``v mod N`` in round ``v div N``; its target is the
    first example of its first local batch.
    """
    if n_victims < 1:
        raise ValueError(f"n_victims must be at least 1, got {n_victims}")
    fed = replace(federation, algorithm=variant)
    if cfg.surface is not AttackSurface.TYPE2_PER_EXAMPLE_GRADIENT and fed.learning_rate <= 0:
        raise ValueError(f"{cfg.surface.value} cannot be inverted with a zero learning rate")
    total = sum(len(c) for c in clients)

    targets: List[Tuple[Example, Gradient]] = []
    for v in range(n_victims):
        client = clients[v % len(clients)]
        round_index = v // len(clients)
        capture = GradientCapture(client.client_id, round_index=round_index)
        train_client(
            model, client, fed, round_index=round_index, total_examples=total, hooks=capture.hooks()
        )
        seen = capture_target(cfg.surface, capture)
        if cfg.surface is not AttackSurface.TYPE2_PER_EXAMPLE_GRADIENT:
            seen = update_to_gradient(seen, fed.learning_rate, fed.local_iterations)
        if capture.victim_index is None:
            raise RuntimeError(f"client {client.client_id} produced no per-example gradient")
        targets.append((client.data.example(capture.victim_index), seen))
    logger.debug("Attacking %d victims at %s", n_victims, cfg.surface.value)
    return run_campaign(
        model, targets, cfg, algorithm=variant.kind.value, max_workers=max_workers
    )
