"""Privacy ledgers and composition accountants.

Entries that share ``(round, step, mechanism)`` were released in parallel on
disjoint client data and are priced as one step at the largest sampling rate
and smallest noise scale in the group. Distinct steps compose sequentially.
"""
from __future__ import annotations

import logging
import math
import threading
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate
from scipy.special import gammaln, logsumexp

from .errors import AccountingError
from .noise import min_epsilon_for_sigma
from .types import AccountingMethod, Mechanism

__all__ = [
    "LedgerEntry",
    "PrivacyLedger",
    "PrivacySpend",
    "MAX_ORDER",
    "account",
    "account_all",
    "advanced_compose",
    "advanced_compose_ledger",
    "base_compose",
    "budget_exhausted",
    "log_moment_closed_form",
    "log_moments",
    "moments_epsilon",
    "parallel_compose",
    "post_processing_beta",
    "zcdp_epsilon",
]

logger = logging.getLogger(__name__)

MAX_ORDER = 64
_TAIL_WIDTH = 15.0
_GRID_POINTS = 4001


@dataclass(frozen=True)
class LedgerEntry:
    """One noise injection: round ``t``, step ``l``, its noise and sampling rate."""

    round: int
    step: int
    sigma: float
    sensitivity: float
    sampling_rate: float
    mechanism: Mechanism
    client: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0 < self.sampling_rate <= 1:
            raise ValueError(f"sampling rate must lie in (0, 1], got {self.sampling_rate}")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.round < 0 or self.step < 0:
            raise ValueError("round and step indices must be non-negative")

    @property
    def key(self) -> Tuple[int, int, Mechanism]:
        return (self.round, self.step, self.mechanism)


@dataclass(frozen=True)
class PrivacySpend:
    """An ``(epsilon, delta)`` guarantee and the method that produced it."""

    epsilon: float
    delta: float
    method: AccountingMethod

    def __post_init__(self) -> None:
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if not 0 <= self.delta < 1:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")


@dataclass(frozen=True)
class _Step:
    sampling_rate: float
    sigma: float


class PrivacyLedger:
    """Append-only record of noise injections, ordered by ``(round, step)``.

    One writer appends; readers may query concurrently with each other.
    """

    def __init__(self, delta: float = 1e-5, entries: Iterable[LedgerEntry] = ()) -> None:
        if not 0 < delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {delta}")
        self.delta = delta
        self._entries: List[LedgerEntry] = []
        self._steps: Dict[Tuple[int, int, Mechanism], _Step] = {}
        self._lock = threading.Lock()
        self.extend(entries)

    # ------------------------------------------------------------------
    # Writing
    # ------------------------------------------------------------------

    def append(self, entry: LedgerEntry) -> None:
        with self._lock:
            if self._entries:
                last = self._entries[-1]
                if (entry.round, entry.step) < (last.round, last.step):
                    logger.error("Out-of-order ledger entry %s after %s", entry, last)
                    raise ValueError(
                        f"entry ({entry.round}, {entry.step}) precedes ({last.round}, {last.step})"
                    )
            self._entries.append(entry)
            current = self._steps.get(entry.key)
            if current is None:
                self._steps[entry.key] = _Step(entry.sampling_rate, entry.sigma)
            else:
                self._steps[entry.key] = _Step(
                    max(current.sampling_rate, entry.sampling_rate),
                    min(current.sigma, entry.sigma),
                )

    def extend(self, entries: Iterable[LedgerEntry]) -> None:
        for entry in entries:
            self.append(entry)

    def merge_segments(self, segments: Sequence[Sequence[LedgerEntry]]) -> None:
        """Append client segments of one round in ``(round, step, client)`` order."""
        merged = sorted(
            (e for segment in segments for e in segment),
            key=lambda e: (e.round, e.step, -1 if e.client is None else e.client),
        )
        self.extend(merged)

    # ------------------------------------------------------------------
    # Reading
    # ------------------------------------------------------------------

    @property
    def entries(self) -> Tuple[LedgerEntry, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[LedgerEntry]:
        return iter(self.entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PrivacyLedger):
            return NotImplemented
        return self.delta == other.delta and self.entries == other.entries

    @property
    def step_count(self) -> int:
        return len(self._steps)

    def steps(self) -> List[_Step]:
        """Sequential steps in ledger order."""
        with self._lock:
            return list(self._steps.values())

    def copy(self) -> "PrivacyLedger":
        return PrivacyLedger(self.delta, self._entries)


def _require_steps(ledger: PrivacyLedger) -> List[_Step]:
    steps = ledger.steps()
    if not steps:
        logger.error("Accounting requested on an empty ledger")
        raise ValueError("cannot account an empty ledger")
    return steps


def _amplified_epsilon(step: _Step, delta: float) -> float:
    """Per-step epsilon of the Gaussian mechanism amplified by sampling at rate ``q``."""
    eps = min_epsilon_for_sigma(step.sigma, delta)
    return math.log1p(step.sampling_rate * math.expm1(eps))


# ----------------------------------------------------------------------
# Composition theorems
# ----------------------------------------------------------------------


def base_compose(ledger: PrivacyLedger) -> PrivacySpend:
    """Sum of per-step epsilons; per-step deltas of ``delta / steps`` sum to ``delta``."""
    steps = _require_steps(ledger)
    epsilon = math.fsum(_amplified_epsilon(s, ledger.delta) for s in steps)
    return PrivacySpend(epsilon, ledger.delta, AccountingMethod.BASE)


def parallel_compose(spends: Sequence[PrivacySpend]) -> PrivacySpend:
    """Mechanisms run on disjoint data cost the worst of them."""
    if not spends:
        raise ValueError("parallel composition needs at least one spend")
    return PrivacySpend(
        max(s.epsilon for s in spends),
        max(s.delta for s in spends),
        AccountingMethod.PARALLEL,
    )


def advanced_compose(epsilon: float, delta: float, steps: int, slack: float) -> PrivacySpend:
    """``eps * sqrt(2T ln(1/slack)) + T eps (e^eps - 1)`` with total delta ``T delta + slack``."""
    if epsilon < 0:
        raise ValueError(f"per-step epsilon must be non-negative, got {epsilon}")
    if steps < 1:
        raise ValueError(f"steps must be at least 1, got {steps}")
    if not 0 < slack < 1:
        raise ValueError(f"slack delta must lie in (0, 1), got {slack}")
    total_delta = steps * delta + slack
    if total_delta >= 1:
        raise ValueError(f"composed delta {total_delta} is not below 1")
    total = epsilon * math.sqrt(2.0 * steps * math.log(1.0 / slack))
    total += steps * epsilon * math.expm1(epsilon)
    return PrivacySpend(total, total_delta, AccountingMethod.ADVANCED)


def advanced_compose_ledger(ledger: PrivacyLedger, slack: Optional[float] = None) -> PrivacySpend:
    """Advanced composition over heterogeneous steps.

    ``sqrt(2 ln(1/slack) sum eps_i^2) + sum eps_i (e^eps_i - 1)``, reducing to
    :func:`advanced_compose` when every step has the same epsilon.
    """
    steps = _require_steps(ledger)
    slack = ledger.delta if slack is None else slack
    eps = np.array([_amplified_epsilon(s, ledger.delta) for s in steps])
    total = math.sqrt(2.0 * math.log(1.0 / slack) * float(np.sum(eps**2))) + float(
        np.sum(eps * np.expm1(eps))
    )
    if ledger.delta + slack >= 1:
        raise ValueError(f"composed delta {ledger.delta + slack} is not below 1")
    return PrivacySpend(total, ledger.delta + slack, AccountingMethod.ADVANCED)


def zcdp_epsilon(ledger: PrivacyLedger) -> PrivacySpend:
    """Accumulate ``rho_i = min(1, 2 q^2) / (2 sigma_i^2)`` and convert to (epsilon, delta)."""
    steps = _require_steps(ledger)
    rho = math.fsum(min(1.0, 2.0 * s.sampling_rate**2) / (2.0 * s.sigma**2) for s in steps)
    epsilon = rho + 2.0 * math.sqrt(rho * math.log(1.0 / ledger.delta))
    return PrivacySpend(epsilon, ledger.delta, AccountingMethod.ZCDP)


# ----------------------------------------------------------------------
# Moments accountant
# ----------------------------------------------------------------------


def _log_ratio(z, q: float, sigma: float):
    """``log(1 - q + q exp((2z - 1) / (2 sigma^2)))`` for scalars or arrays."""
    shift = (2.0 * z - 1.0) / (2.0 * sigma**2)
    if q >= 1.0:
        return shift
    return np.logaddexp(math.log1p(-q), math.log(q) + shift)


def _log_integral(log_integrand: Callable, lo: float, hi: float) -> float:
    """``log`` of the integral of ``exp(log_integrand)`` over ``[lo, hi]``."""
    grid = np.linspace(lo, hi, _GRID_POINTS)
    values = log_integrand(grid)
    peak_index = int(np.argmax(values))
    peak = float(values[peak_index])
    if not math.isfinite(peak):
        return math.nan
    value, _ = integrate.quad(
        lambda z: math.exp(float(log_integrand(z)) - peak),
        lo,
        hi,
        points=[float(grid[peak_index])],
        limit=200,
        epsabs=1e-12,
        epsrel=1e-10,
    )
    if not (value > 0 and math.isfinite(value)):
        return math.nan
    return peak + math.log(value)


@lru_cache(maxsize=4096)
def log_moments(q: float, sigma: float) -> Tuple[float, ...]:
    """Log-moments ``alpha(lambda)`` for ``lambda = 1..64`` of one sampled Gaussian step.

    ``alpha`` is the larger of the two directional moments of the privacy loss
    between ``N(0, sigma^2)`` and the mixture ``(1-q) N(0, sigma^2) + q N(1, sigma^2)``,
    each integrated numerically in log space.
    """
    if not 0 < q <= 1:
        raise ValueError(f"sampling rate must lie in (0, 1], got {q}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    log_norm = -0.5 * math.log(2.0 * math.pi * sigma**2)

    def base_density(z):
        return log_norm - z**2 / (2.0 * sigma**2)

    alphas = []
    for order in range(1, MAX_ORDER + 1):
        lo = -(order + 1) - _TAIL_WIDTH * sigma
        hi = (order + 1) + _TAIL_WIDTH * sigma
        mixture_side = _log_integral(
            lambda z, n=order: base_density(z) + (n + 1) * _log_ratio(z, q, sigma), lo, hi
        )
        base_side = _log_integral(
            lambda z, n=order: base_density(z) - n * _log_ratio(z, q, sigma), lo, hi
        )
        alphas.append(max(mixture_side, base_side))
    return tuple(alphas)


def log_moment_closed_form(q: float, sigma: float, order: int) -> float:
    """Binomial expansion of the mixture-side moment at integer ``order``."""
    n = order + 1
    if q >= 1.0:
        return n * (n - 1) / (2.0 * sigma**2)
    k = np.arange(n + 1)
    terms = (
        gammaln(n + 1)
        - gammaln(k + 1)
        - gammaln(n - k + 1)
        + (n - k) * math.log1p(-q)
        + k * math.log(q)
        + k * (k - 1) / (2.0 * sigma**2)
    )
    return float(logsumexp(terms))


def moments_epsilon(ledger: PrivacyLedger) -> PrivacySpend:
    """Moments accountant: ``min over lambda of (sum alpha(lambda) + ln(1/delta)) / lambda``."""
    steps = _require_steps(ledger)
    first_index: Dict[Tuple[float, float], int] = {}
    for index, s in enumerate(steps):
        first_index.setdefault((s.sampling_rate, s.sigma), index)
    counts = Counter((s.sampling_rate, s.sigma) for s in steps)

    total = np.zeros(MAX_ORDER)
    for (q, sigma), count in counts.items():
        alphas = np.array(log_moments(q, sigma))
        bad = np.flatnonzero(~np.isfinite(alphas))
        if bad.size:
            order = int(bad[0]) + 1
            logger.error("Non-finite log-moment at order %d for q=%s sigma=%s", order, q, sigma)
            raise AccountingError(
                f"non-finite log-moment for q={q}, sigma={sigma}",
                order=order,
                entry=first_index[(q, sigma)],
            )
        total += count * alphas
    orders = np.arange(1, MAX_ORDER + 1)
    candidates = (total + math.log(1.0 / ledger.delta)) / orders
    epsilon = float(np.min(candidates))
    logger.debug("Moments accountant best order %d", int(orders[np.argmin(candidates)]))
    return PrivacySpend(max(epsilon, 0.0), ledger.delta, AccountingMethod.MOMENTS)


# ----------------------------------------------------------------------
# Queries
# ----------------------------------------------------------------------


_SEQUENTIAL = {
    AccountingMethod.BASE: base_compose,
    AccountingMethod.ADVANCED: advanced_compose_ledger,
    AccountingMethod.ZCDP: zcdp_epsilon,
    AccountingMethod.MOMENTS: moments_epsilon,
}


def account(ledger: PrivacyLedger, method: AccountingMethod) -> PrivacySpend:
    """Account ``ledger`` with a sequential composition method."""
    compose = _SEQUENTIAL.get(method)
    if compose is None:
        raise ValueError(f"{method.value} is not a ledger accounting method")
    return compose(ledger)


def account_all(ledger: PrivacyLedger) -> Dict[AccountingMethod, PrivacySpend]:
    """Every sequential method, in moments, zCDP, advanced, base order."""
    order = (
        AccountingMethod.MOMENTS,
        AccountingMethod.ZCDP,
        AccountingMethod.ADVANCED,
        AccountingMethod.BASE,
    )
    return {method: account(ledger, method) for method in order}


def budget_exhausted(ledger: PrivacyLedger, method: AccountingMethod, budget: float) -> bool:
    """True iff the accounted epsilon exceeds ``budget``; an empty ledger never does."""
    if budget <= 0:
        raise ValueError(f"budget must be positive, got {budget}")
    if len(ledger) == 0:
        return False
    return account(ledger, method).epsilon > budget


def post_processing_beta(batch_size: int, epsilon: float, sensitivity: float) -> float:
    """``B * eps / (2 S)``, the constant relating post-processed steps to the ledger's spend."""
    if sensitivity <= 0:
        raise ValueError(f"sensitivity must be positive, got {sensitivity}")
    return batch_size * epsilon / (2.0 * sensitivity)
