"""Federated training simulator.

Every round samples ``K_t`` of ``N`` clients, runs the configured variant's
local training on each, applies any client- or server-side sanitization and
averages the updates into the global model. Clients may train on a thread
pool; each owns its model copy, its random streams and its ledger segment.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .accountant import LedgerEntry, PrivacyLedger, PrivacySpend, account_all, budget_exhausted
from .defenses import additive_random_noise, prune_random_dssgd, prune_threshold
from .nn.model import accuracy, per_example_gradient_stack, sgd_step
from .nn.types import Batch, Gradient, LayerGradient, ModelParams, PerExampleGradient
from .nn.utils import add, check_congruent, mean_stack, model_difference, scale, split_stack
from .noise import PrivacyParams, clip_stack, clip_update, gaussian_noise, sensitivity_for
from .seeding import derive_rng
from .types import (
    AccountingMethod,
    AlgorithmKind,
    Mechanism,
    NoisePlacement,
    SensitivityMode,
    StopKind,
    Stream,
)

__all__ = [
    "AlgorithmVariant",
    "CaptureHooks",
    "ClientDataset",
    "ClientResult",
    "Federation",
    "FederationConfig",
    "RoundRecord",
    "RoundUpdate",
    "StopCondition",
    "TrainingReport",
    "aggregate",
    "local_train_per_example_dp",
    "local_train_raw",
    "partition_iid",
    "run_training",
    "sample_clients",
    "sdp_sanitize",
    "train_client",
]

logger = logging.getLogger(__name__)

TIMEOUT_FACTOR = 10

_CDP_FAMILY = {
    AlgorithmKind.FED_CDP,
    AlgorithmKind.FED_ALPHA_CDP,
    AlgorithmKind.FED_ALPHA_CDP_SIGMA,
}
_SDP_FAMILY = {AlgorithmKind.FED_SDP_CLIENT, AlgorithmKind.FED_SDP_SERVER}


@dataclass(frozen=True)
class AlgorithmVariant:
    """A training variant and the parameters of its defense, if any."""

    kind: AlgorithmKind
    prune_percent: float = 10.0
    keep_fraction: float = 0.1
    prune_threshold: float = 0.0
    noise_variance: float = 0.01

    def __post_init__(self) -> None:
        if not 0 <= self.prune_percent < 100:
            raise ValueError(f"prune percent must lie in [0, 100), got {self.prune_percent}")
        if not 0 < self.keep_fraction <= 1:
            raise ValueError(f"keep fraction must lie in (0, 1], got {self.keep_fraction}")
        if self.noise_variance < 0:
            raise ValueError(f"noise variance must be non-negative, got {self.noise_variance}")

    @property
    def is_cdp_family(self) -> bool:
        return self.kind in _CDP_FAMILY

    @property
    def is_sdp(self) -> bool:
        return self.kind in _SDP_FAMILY

    @property
    def is_private(self) -> bool:
        return self.is_cdp_family or self.is_sdp


@dataclass(frozen=True)
class FederationConfig:
    """Population, round structure and privacy settings of a run."""

    num_clients: int = 1000
    clients_per_round: int = 100
    rounds: int = 100
    local_iterations: int = 100
    batch_size: int = 5
    learning_rate: float = 0.1
    algorithm: AlgorithmVariant = field(
        default_factory=lambda: AlgorithmVariant(AlgorithmKind.FED_ALPHA_CDP_SIGMA)
    )
    privacy: PrivacyParams = field(default_factory=lambda: PrivacyParams(4.0, 6.0))
    sensitivity: SensitivityMode = SensitivityMode.L2_MAX
    seed: int = 0
    noise_placement: NoisePlacement = NoisePlacement.POST_AVERAGE
    inject_noise: bool = True
    max_workers: int = 1

    def __post_init__(self) -> None:
        if self.num_clients < 1:
            raise ValueError(f"num_clients must be positive, got {self.num_clients}")
        if not 1 <= self.clients_per_round <= self.num_clients:
            raise ValueError(
                f"clients_per_round must lie in [1, {self.num_clients}], "
                f"got {self.clients_per_round}"
            )
        for name in ("rounds", "local_iterations", "batch_size", "max_workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.learning_rate < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.learning_rate}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")

    @property
    def effective_sensitivity(self) -> SensitivityMode:
        """Fed-CDP always uses the clip bound; the alpha variants use l2-max."""
        if self.algorithm.kind is AlgorithmKind.FED_CDP:
            return SensitivityMode.FIXED_CLIP
        if self.algorithm.kind in (AlgorithmKind.FED_ALPHA_CDP, AlgorithmKind.FED_ALPHA_CDP_SIGMA):
            return SensitivityMode.L2_MAX
        return self.sensitivity

    def sigma_at(self, t: int) -> float:
        """Noise scale of round ``t``; only the scheduled variant decays."""
        if self.algorithm.kind is AlgorithmKind.FED_ALPHA_CDP_SIGMA:
            return self.privacy.sigma_at(t)
        return self.privacy.noise_scale

    @property
    def client_sampling_rate(self) -> float:
        """``q2 = K_t / N``."""
        return self.clients_per_round / self.num_clients

    def example_sampling_rate(self, total_examples: int) -> float:
        """``q1 = B * K_t / |D|``, capped at 1."""
        if total_examples < 1:
            raise ValueError("the training set is empty")
        return min(1.0, self.batch_size * self.clients_per_round / total_examples)


@dataclass(frozen=True, eq=False)
class ClientDataset:
    """One client's disjoint share of the training set."""

    client_id: int
    data: Batch

    def __len__(self) -> int:
        return len(self.data)


@dataclass(frozen=True, eq=False)
class RoundUpdate:
    """``ΔW`` a client produced in one round."""

    client_id: int
    delta: Gradient
    sanitized: bool = False


@dataclass
class CaptureHooks:
    """Observation points for the three attack surfaces.

    ``type2(client_id, round, step, gradients)`` sees the per-example gradients
    entering each local step (sanitized for the per-example DP variants).
    ``type1(client_id, round, update)`` sees the update as local training ends.
    ``type0(client_id, round, update)`` sees the update as the server receives it.
    """

    type0: Optional[Callable[[int, int, Gradient], None]] = None
    type1: Optional[Callable[[int, int, Gradient], None]] = None
    type2: Optional[Callable[[int, int, int, List[PerExampleGradient]], None]] = None


@dataclass(frozen=True, eq=False)
class ClientResult:
    update: RoundUpdate
    entries: Tuple[LedgerEntry, ...] = ()


@dataclass(frozen=True)
class StopCondition:
    """When ``run_training`` stops."""

    kind: StopKind = StopKind.ROUNDS
    budget: Optional[float] = None
    method: AccountingMethod = AccountingMethod.MOMENTS
    target_accuracy: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind is StopKind.BUDGET and (self.budget is None or self.budget <= 0):
            raise ValueError("a budget stop needs a positive budget")
        if self.kind is StopKind.TARGET_ACCURACY and (
            self.target_accuracy is None or not 0 < self.target_accuracy <= 1
        ):
            raise ValueError("a target-accuracy stop needs a target in (0, 1]")
        if self.method is AccountingMethod.PARALLEL:
            raise ValueError("parallel composition cannot account a ledger")


@dataclass(frozen=True)
class RoundRecord:
    """Validation accuracy, noise level and spend after one round."""

    round: int
    val_accuracy: float
    sigma_t: float
    mean_S: float
    eps_moments: float
    eps_zcdp: float
    eps_adv: float
    eps_base: float


@dataclass
class TrainingReport:
    """Outcome of a training run.

    ``ledger``, ``model`` and ``seconds_per_iteration`` are carried for the
    caller but are not part of the report's identity.
    """

    algorithm: str
    per_round: List[RoundRecord]
    final_accuracy: float
    rounds_used: int
    delta: float
    spends: Tuple[PrivacySpend, ...] = ()
    timed_out: bool = False
    ledger: Optional[PrivacyLedger] = field(default=None, compare=False)
    model: Optional[ModelParams] = field(default=None, compare=False)
    seconds_per_iteration: float = field(default=0.0, compare=False)

    def spend(self, method: AccountingMethod) -> Optional[PrivacySpend]:
        return next((s for s in self.spends if s.method is method), None)


# ----------------------------------------------------------------------
# Population
# ----------------------------------------------------------------------


def partition_iid(
    train: Batch,
    num_clients: int,
    rng: np.random.Generator,
    client_size: Optional[int] = None,
) -> List[ClientDataset]:
    """Shuffle ``train`` and split it into ``num_clients`` disjoint shares."""
    if num_clients < 1:
        raise ValueError(f"num_clients must be positive, got {num_clients}")
    order = rng.permutation(len(train))
    if client_size is not None:
        needed = client_size * num_clients
        if client_size < 1 or needed > len(train):
            raise ValueError(
                f"{num_clients} clients of {client_size} examples need {needed}, "
                f"only {len(train)} available"
            )
        order = order[:needed]
    if len(order) < num_clients:
        raise ValueError(f"{len(order)} examples cannot serve {num_clients} clients")
    return [
        ClientDataset(client_id, train.take(np.sort(chunk)))
        for client_id, chunk in enumerate(np.array_split(order, num_clients))
    ]


def sample_clients(N: int, K_t: int, rng: np.random.Generator) -> List[int]:
    """``K_t`` distinct client ids drawn uniformly, returned in ascending order."""
    if not 1 <= K_t <= N:
        logger.error("Cannot sample %d of %d clients", K_t, N)
        raise ValueError(f"cannot sample {K_t} clients from {N}")
    return sorted(int(i) for i in rng.choice(N, size=K_t, replace=False))


def _sample_batch(rng: np.random.Generator, size: int, batch_size: int) -> np.ndarray:
    if batch_size > size:
        logger.error("Batch size %d exceeds client data size %d", batch_size, size)
        raise ValueError(f"batch size {batch_size} exceeds the client's {size} examples")
    return rng.choice(size, size=batch_size, replace=False)


# ----------------------------------------------------------------------
# Local training
# ----------------------------------------------------------------------


def local_train_raw(
    model: ModelParams,
    data: ClientDataset,
    cfg: FederationConfig,
    *,
    round_index: int = 0,
    hooks: Optional[CaptureHooks] = None,
) -> RoundUpdate:
    """Plain ``L``-step minibatch SGD; returns the raw ``ΔW``."""
    batches = derive_rng(cfg.seed, Stream.LOCAL, round_index, data.client_id)
    w = model
    for step in range(cfg.local_iterations):
        index = _sample_batch(batches, len(data), cfg.batch_size)
        stack = per_example_gradient_stack(w, data.data.features[index], data.data.labels[index])
        if hooks is not None and hooks.type2 is not None:
            hooks.type2(data.client_id, round_index, step, split_stack(stack, index))
        w = sgd_step(w, mean_stack(stack), cfg.learning_rate)
    return RoundUpdate(data.client_id, model_difference(w, model), sanitized=False)


def _noisy_batch_gradient(
    clipped: Gradient,
    sigma: float,
    sensitivity: float,
    placement: NoisePlacement,
    rng: np.random.Generator,
) -> Tuple[Gradient, Gradient]:
    """Return the sanitized batch gradient and the per-example view that averages to it."""
    batch = clipped[0].weights.shape[0]
    grad: List[LayerGradient] = []
    view: List[LayerGradient] = []
    for g in clipped:
        if placement is NoisePlacement.PER_EXAMPLE_THEN_AVERAGE:
            noisy_w = g.weights + gaussian_noise(g.weights.shape, sigma, sensitivity, rng)
            noisy_b = g.bias + gaussian_noise(g.bias.shape, sigma, sensitivity, rng)
            view.append(LayerGradient(noisy_w, noisy_b))
            grad.append(LayerGradient(noisy_w.mean(axis=0), noisy_b.mean(axis=0)))
            continue
        noise_w = gaussian_noise(g.weights.shape[1:], sigma, sensitivity, rng)
        noise_b = gaussian_noise(g.bias.shape[1:], sigma, sensitivity, rng)
        if placement is NoisePlacement.SUM_THEN_AVERAGE:
            noise_w, noise_b = noise_w / batch, noise_b / batch
        grad.append(LayerGradient(g.weights.mean(axis=0) + noise_w, g.bias.mean(axis=0) + noise_b))
        view.append(LayerGradient(g.weights + noise_w, g.bias + noise_b))
    return tuple(grad), tuple(view)


def local_train_per_example_dp(
    model: ModelParams,
    data: ClientDataset,
    cfg: FederationConfig,
    *,
    round_index: int = 0,
    sampling_rate: Optional[float] = None,
    hooks: Optional[CaptureHooks] = None,
) -> Tuple[RoundUpdate, List[LedgerEntry]]:
    """Per-example DP local training: clip, measure S, add noise, step.

    Parameters
    ----------
    model
        Global model at the start of the round.
    data
        The client's dataset.
    cfg
        Federation settings; the algorithm must be in the per-example DP family.
    round_index
        Zero-based round, used for the noise scale and random streams.
    sampling_rate
        ``q1`` recorded in the ledger. Defaults to ``B * K_t / (N * |D_i|)``,
        which equals ``B * K_t / |D|`` for an even partition.
    hooks
        Optional capture hooks.

    Returns
    -------
    tuple
        The sanitized update and one ledger entry per local iteration.
    """
    if not cfg.algorithm.is_cdp_family:
        raise ValueError(f"{cfg.algorithm.kind.value} does not train with per-example noise")
    if sampling_rate is None:
        sampling_rate = cfg.example_sampling_rate(len(data) * cfg.num_clients)

    batches = derive_rng(cfg.seed, Stream.LOCAL, round_index, data.client_id)
    noise = derive_rng(cfg.seed, Stream.NOISE, round_index, data.client_id)
    clip_bound = cfg.privacy.clip_bound
    mode = cfg.effective_sensitivity
    sigma = cfg.sigma_at(round_index)

    entries: List[LedgerEntry] = []
    w = model
    for step in range(cfg.local_iterations):
        index = _sample_batch(batches, len(data), cfg.batch_size)
        clipped = clip_stack(
            per_example_gradient_stack(w, data.data.features[index], data.data.labels[index]),
            clip_bound,
        )
        sensitivity = sensitivity_for(mode, clipped, clip_bound)
        if cfg.inject_noise:
            grad, view = _noisy_batch_gradient(
                clipped, sigma, sensitivity, cfg.noise_placement, noise
            )
        else:
            grad, view = mean_stack(clipped), clipped
        if hooks is not None and hooks.type2 is not None:
            hooks.type2(data.client_id, round_index, step, split_stack(view, index))
        w = sgd_step(w, grad, cfg.learning_rate)
        entries.append(
            LedgerEntry(
                round_index,
                step,
                sigma,
                sensitivity,
                sampling_rate,
                Mechanism.PER_EXAMPLE,
                data.client_id,
            )
        )
    return RoundUpdate(data.client_id, model_difference(w, model), sanitized=True), entries


def sdp_sanitize(
    update: RoundUpdate,
    C: float,
    sigma: float,
    rng: np.random.Generator,
    *,
    inject_noise: bool = True,
) -> RoundUpdate:
    """Clip the whole update to norm ``C`` and add ``N(0, sigma^2 C^2)`` per coordinate."""
    clipped = clip_update(update.delta, C)
    if inject_noise:
        clipped = tuple(
            LayerGradient(
                g.weights + gaussian_noise(g.weights.shape, sigma, C, rng),
                g.bias + gaussian_noise(g.bias.shape, sigma, C, rng),
            )
            for g in clipped
        )
    return RoundUpdate(update.client_id, clipped, sanitized=True)


def train_client(
    model: ModelParams,
    client: ClientDataset,
    cfg: FederationConfig,
    *,
    round_index: int,
    total_examples: int,
    hooks: Optional[CaptureHooks] = None,
) -> ClientResult:
    """Run one client's side of a round, up to the point the server receives its update."""
    kind = cfg.algorithm.kind
    entries: List[LedgerEntry] = []
    if cfg.algorithm.is_cdp_family:
        sent, entries = local_train_per_example_dp(
            model,
            client,
            cfg,
            round_index=round_index,
            sampling_rate=cfg.example_sampling_rate(total_examples),
            hooks=hooks,
        )
        if hooks is not None and hooks.type1 is not None:
            hooks.type1(client.client_id, round_index, sent.delta)
    else:
        raw = local_train_raw(model, client, cfg, round_index=round_index, hooks=hooks)
        if hooks is not None and hooks.type1 is not None:
            hooks.type1(client.client_id, round_index, raw.delta)
        sent = _client_side_defense(raw, cfg, round_index)
        if kind is AlgorithmKind.FED_SDP_CLIENT:
            entries = [_sdp_entry(cfg, round_index, client.client_id)]

    if hooks is not None and hooks.type0 is not None:
        hooks.type0(client.client_id, round_index, sent.delta)
    return ClientResult(sent, tuple(entries))


def _client_side_defense(raw: RoundUpdate, cfg: FederationConfig, t: int) -> RoundUpdate:
    variant = cfg.algorithm
    cid = raw.client_id
    if variant.kind is AlgorithmKind.FED_SDP_CLIENT:
        rng = derive_rng(cfg.seed, Stream.NOISE, t, cid)
        return sdp_sanitize(
            raw,
            cfg.privacy.clip_bound,
            cfg.privacy.noise_scale,
            rng,
            inject_noise=cfg.inject_noise,
        )
    if variant.kind is AlgorithmKind.PRUNE_THRESHOLD:
        return RoundUpdate(cid, prune_threshold(raw.delta, variant.prune_percent))
    if variant.kind is AlgorithmKind.PRUNE_RANDOM_DSSGD:
        rng = derive_rng(cfg.seed, Stream.DEFENSE, t, cid)
        return RoundUpdate(
            cid,
            prune_random_dssgd(raw.delta, variant.keep_fraction, variant.prune_threshold, rng),
        )
    if variant.kind is AlgorithmKind.ADDITIVE_NOISE:
        rng = derive_rng(cfg.seed, Stream.DEFENSE, t, cid)
        return RoundUpdate(cid, additive_random_noise(raw.delta, variant.noise_variance, rng))
    return raw


def _sdp_entry(cfg: FederationConfig, t: int, client_id: int) -> LedgerEntry:
    return LedgerEntry(
        t,
        0,
        cfg.privacy.noise_scale,
        cfg.privacy.clip_bound,
        cfg.client_sampling_rate,
        Mechanism.PER_CLIENT,
        client_id,
    )


# ----------------------------------------------------------------------
# Server
# ----------------------------------------------------------------------


def aggregate(global_model: ModelParams, updates: Sequence[RoundUpdate]) -> ModelParams:
    """``W + mean(ΔW_i)``, summing in client-id order."""
    if not updates:
        raise ValueError("aggregation needs at least one update")
    ordered = sorted(updates, key=lambda u: u.client_id)
    for u in ordered:
        check_congruent(global_model, u.delta)
    total = ordered[0].delta
    for u in ordered[1:]:
        total = add(total, u.delta)
    mean = scale(total, 1.0 / len(ordered))
    return ModelParams(
        tuple(
            layer.replace(layer.weights + g.weights, layer.bias + g.bias)
            for layer, g in zip(global_model.layers, mean)
        )
    )


@dataclass(frozen=True, eq=False)
class RoundOutcome:
    model: ModelParams
    updates: Tuple[RoundUpdate, ...]
    mean_sensitivity: float


class Federation:
    """A client population, its validation set and the round loop.

    Parameters
    ----------
    cfg
        Federation settings.
    clients
        Partition of the training set; its length must be ``cfg.num_clients``.
    validation
        Held-out batch for per-round accuracy.
    hooks
        Optional capture hooks, invoked from worker threads when
        ``cfg.max_workers > 1``.
    """

    def __init__(
        self,
        cfg: FederationConfig,
        clients: Sequence[ClientDataset],
        validation: Batch,
        *,
        hooks: Optional[CaptureHooks] = None,
    ) -> None:
        if len(clients) != cfg.num_clients:
            raise ValueError(
                f"partition has {len(clients)} clients, config expects {cfg.num_clients}"
            )
        if [c.client_id for c in clients] != list(range(cfg.num_clients)):
            raise ValueError("client ids must be 0..N-1 in order")
        self.cfg = cfg
        self.clients = list(clients)
        self.validation = validation
        self.hooks = hooks
        self.total_examples = sum(len(c) for c in clients)

    # ------------------------------------------------------------------
    # Rounds
    # ------------------------------------------------------------------

    def _map(self, fn: Callable[[ClientDataset], ClientResult], clients: List[ClientDataset]):
        if self.cfg.max_workers <= 1 or len(clients) <= 1:
            return [fn(c) for c in clients]
        with ThreadPoolExecutor(max_workers=self.cfg.max_workers) as pool:
            return list(pool.map(fn, clients))

    def run_round(self, model: ModelParams, t: int, ledger: PrivacyLedger) -> RoundOutcome:
        """Run round ``t`` and append its ledger entries."""
        cfg = self.cfg
        chosen = sample_clients(
            cfg.num_clients, cfg.clients_per_round, derive_rng(cfg.seed, Stream.SAMPLING, t)
        )
        results: List[ClientResult] = self._map(
            lambda c: train_client(
                model,
                c,
                cfg,
                round_index=t,
                total_examples=self.total_examples,
                hooks=self.hooks,
            ),
            [self.clients[i] for i in chosen],
        )

        updates = [r.update for r in results]
        segments = [list(r.entries) for r in results]
        if cfg.algorithm.kind is AlgorithmKind.FED_SDP_SERVER:
            updates = [
                sdp_sanitize(
                    u,
                    cfg.privacy.clip_bound,
                    cfg.privacy.noise_scale,
                    derive_rng(cfg.seed, Stream.SERVER_NOISE, t, u.client_id),
                    inject_noise=cfg.inject_noise,
                )
                for u in updates
            ]
            segments = [[_sdp_entry(cfg, t, u.client_id)] for u in updates]

        ledger.merge_segments(segments)
        sensitivities = [e.sensitivity for segment in segments for e in segment]
        mean_s = float(np.mean(sensitivities)) if sensitivities else 0.0
        return RoundOutcome(aggregate(model, updates), tuple(updates), mean_s)

    def train(self, model: ModelParams, stop: StopCondition) -> TrainingReport:
        """Run rounds until ``stop`` fires or the ``10 * T`` round cap is reached."""
        cfg = self.cfg
        ledger = PrivacyLedger(cfg.privacy.delta)
        records: List[RoundRecord] = []
        cap = cfg.rounds if stop.kind is StopKind.ROUNDS else TIMEOUT_FACTOR * cfg.rounds
        if stop.kind is StopKind.BUDGET and not cfg.algorithm.is_private:
            logger.warning(
                "%s spends no budget; training runs to the round cap", cfg.algorithm.kind.value
            )

        spends: Dict[AccountingMethod, PrivacySpend] = {}
        started = time.perf_counter()
        rounds_used = 0
        reached = stop.kind is StopKind.ROUNDS
        for t in range(cap):
            outcome = self.run_round(model, t, ledger)
            model = outcome.model
            rounds_used = t + 1
            spends = account_all(ledger) if len(ledger) else {}
            val_acc = accuracy(model, self.validation)
            records.append(
                RoundRecord(
                    round=rounds_used,
                    val_accuracy=val_acc,
                    sigma_t=cfg.sigma_at(t) if cfg.algorithm.is_private else 0.0,
                    mean_S=outcome.mean_sensitivity,
                    eps_moments=_eps(spends, AccountingMethod.MOMENTS),
                    eps_zcdp=_eps(spends, AccountingMethod.ZCDP),
                    eps_adv=_eps(spends, AccountingMethod.ADVANCED),
                    eps_base=_eps(spends, AccountingMethod.BASE),
                )
            )
            logger.debug(
                "Round %d: accuracy=%.4f eps_moments=%.4f",
                rounds_used,
                val_acc,
                records[-1].eps_moments,
            )
            if stop.kind is StopKind.BUDGET and budget_exhausted(ledger, stop.method, stop.budget):
                reached = True
                break
            if stop.kind is StopKind.TARGET_ACCURACY and val_acc >= stop.target_accuracy:
                reached = True
                break

        elapsed = time.perf_counter() - started
        if not reached:
            logger.warning("Stop condition not reached within %d rounds", cap)
        return TrainingReport(
            algorithm=cfg.algorithm.kind.value,
            per_round=records,
            final_accuracy=(
                records[-1].val_accuracy if records else accuracy(model, self.validation)
            ),
            rounds_used=rounds_used,
            delta=cfg.privacy.delta,
            spends=tuple(spends.values()),
            timed_out=not reached,
            ledger=ledger,
            model=model,
            seconds_per_iteration=elapsed / max(1, rounds_used * cfg.local_iterations),
        )


def _eps(spends: Dict[AccountingMethod, PrivacySpend], method: AccountingMethod) -> float:
    spend = spends.get(method)
    return spend.epsilon if spend is not None else 0.0


def run_training(
    cfg: FederationConfig,
    partition: Sequence[ClientDataset],
    stop: StopCondition,
    *,
    model: ModelParams,
    validation: Batch,
    hooks: Optional[CaptureHooks] = None,
) -> TrainingReport:
    """Train ``model`` over ``partition`` until ``stop`` fires."""
    return Federation(cfg, partition, validation, hooks=hooks).train(model, stop)
