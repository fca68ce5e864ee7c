"""Experiment configuration files.

An experiment is one INI-style file parsed with :mod:`configparser`::

    [experiment]
    name = mnist-alpha
    master_seed = 7

    [federation]
    algorithm = fed_alpha_cdp_sigma
    rounds = 100

    [privacy]
    schedule = exponential
    sigma_end = 4.85

Every value is validated into frozen dataclasses. Problems raise
:class:`~pyfedcdp.errors.ConfigError` naming the ``section.key`` and the line
it was found on.
"""
from __future__ import annotations

import configparser
import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Type, TypeVar

from .attack import AttackConfig
from .datasets import DatasetSpec
from .errors import ConfigError
from .federation import AlgorithmVariant, FederationConfig, StopCondition
from .nn.model import init_model
from .nn.types import Activation, ConvGeometry, ModelParams
from .noise import (
    DEFAULT_SIGMA_FLOOR,
    NoiseSchedule,
    PrivacyParams,
    exponential_gamma,
    linear_gamma,
    staircase_gamma,
)
from .seeding import derive_rng
from .types import (
    AccountingMethod,
    AlgorithmKind,
    AttackOptimizer,
    AttackSurface,
    DatasetSource,
    NoisePlacement,
    SchedulePolicy,
    SeedKind,
    SensitivityMode,
    StopKind,
    Stream,
)

__all__ = [
    "AttackSettings",
    "ExperimentConfig",
    "ModelSpec",
    "load_config",
    "parse_config",
    "schedule_gamma",
]

logger = logging.getLogger(__name__)

E = TypeVar("E")

_KNOWN_KEYS: Dict[str, Tuple[str, ...]] = {
    "experiment": ("name", "master_seed", "output_dir"),
    "dataset": (
        "source", "classes", "dims", "n", "separation", "path", "label_column", "image_path",
        "label_path", "validation_image_path", "validation_label_path", "subset_n",
        "validation_n", "validation_fraction", "base_url", "cache_dir",
    ),
    "model": (
        "hidden_units", "hidden_layers", "activation", "conv_channels", "conv_kernel",
        "conv_stride", "image_channels", "image_height", "image_width",
    ),
    "federation": (
        "num_clients", "clients_per_round", "rounds", "local_iterations", "batch_size",
        "learning_rate", "algorithm", "noise_placement", "inject_noise", "max_workers",
        "client_size",
    ),
    "privacy": (
        "clip_bound", "noise_scale", "delta", "schedule", "gamma", "sigma_end", "step_size",
        "cycles", "sigma_floor", "sensitivity",
    ),
    "defense": ("prune_percent", "keep_fraction", "prune_threshold", "noise_variance"),
    "stop": ("kind", "budget", "method", "target_accuracy"),
    "attack": (
        "surface", "seed_kind", "max_iterations", "attack_lr", "success_rmse", "victims",
        "optimizer",
    ),
}


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of the trained network."""

    hidden_units: int = 64
    hidden_layers: int = 1
    activation: Activation = Activation.RELU
    conv_channels: int = 0
    conv_kernel: int = 5
    conv_stride: int = 2
    image_channels: int = 1
    image_height: Optional[int] = None
    image_width: Optional[int] = None

    def __post_init__(self) -> None:
        if self.hidden_units < 1 or self.hidden_layers < 0:
            raise ValueError("hidden_units must be positive and hidden_layers non-negative")
        if self.activation is Activation.SOFTMAX_OUTPUT:
            raise ValueError("softmax-output is not a hidden activation")
        if self.conv_channels < 0:
            raise ValueError(f"conv_channels must be non-negative, got {self.conv_channels}")
        if self.conv_channels and (self.image_height is None or self.image_width is None):
            raise ValueError("a convolution needs image_height and image_width")

    def geometry(self) -> Optional[ConvGeometry]:
        if not self.conv_channels:
            return None
        return ConvGeometry(
            self.image_channels,
            self.image_height,  # type: ignore[arg-type]
            self.image_width,  # type: ignore[arg-type]
            self.conv_kernel,
            self.conv_stride,
            self.conv_channels,
        )

    def layer_sizes(self, input_dim: int, num_classes: int) -> list[int]:
        return [input_dim] + [self.hidden_units] * self.hidden_layers + [num_classes]

    def build(self, input_dim: int, num_classes: int, master_seed: int) -> ModelParams:
        """Initialize a model from the INIT stream of ``master_seed``."""
        return init_model(
            self.layer_sizes(input_dim, num_classes),
            derive_rng(master_seed, Stream.INIT),
            self.activation,
            self.geometry(),
        )


@dataclass(frozen=True)
class AttackSettings:
    """Attack parameters plus the number of victims of a campaign."""

    attack: AttackConfig
    victims: int = 20

    def __post_init__(self) -> None:
        if self.victims < 1:
            raise ValueError(f"victims must be positive, got {self.victims}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs."""

    name: str
    master_seed: int
    output_dir: Path
    dataset: DatasetSpec
    model: ModelSpec
    federation: FederationConfig
    stop: StopCondition
    client_size: Optional[int] = None
    attack: Optional[AttackSettings] = None

    def with_overrides(
        self, *, seed: Optional[int] = None, output_dir: Optional[str | Path] = None
    ) -> "ExperimentConfig":
        """Return a copy with the master seed and/or output directory replaced."""
        cfg = self
        if seed is not None:
            if seed < 0:
                raise ConfigError(
                    f"seed must be non-negative, got {seed}", field="experiment.master_seed"
                )
            attack = cfg.attack
            if attack is not None:
                attack = replace(attack, attack=replace(attack.attack, seed=seed))
            cfg = replace(
                cfg, master_seed=seed, federation=replace(cfg.federation, seed=seed), attack=attack
            )
        if output_dir is not None:
            cfg = replace(cfg, output_dir=Path(output_dir))
        return cfg


# ----------------------------------------------------------------------
# Schedules
# ----------------------------------------------------------------------


def schedule_gamma(
    policy: SchedulePolicy,
    initial_sigma: float,
    final_sigma: float,
    total_rounds: int,
    step_size: int = 1,
) -> float:
    """Decay rate that takes ``initial_sigma`` to ``final_sigma`` at round ``T - 1``."""
    if policy is SchedulePolicy.LINEAR:
        return linear_gamma(initial_sigma, final_sigma, total_rounds)
    if policy is SchedulePolicy.EXPONENTIAL:
        return exponential_gamma(initial_sigma, final_sigma, total_rounds)
    if policy is SchedulePolicy.STAIRCASE:
        return staircase_gamma(initial_sigma, final_sigma, total_rounds, step_size)
    raise ValueError(f"{policy.value} schedules are not solved from an end point")


# ----------------------------------------------------------------------
# Parsing
# ----------------------------------------------------------------------


class _Source:
    """Typed access to a parsed file with line-aware diagnostics."""

    def __init__(self, text: str) -> None:
        self._parser = configparser.ConfigParser(interpolation=None)
        try:
            self._parser.read_string(text)
        except configparser.Error as err:
            line = getattr(err, "lineno", None)
            raise ConfigError(f"unparseable configuration: {err.message}", line=line) from err
        self._lines = self._index(text)

    @staticmethod
    def _index(text: str) -> Dict[str, int]:
        lines: Dict[str, int] = {}
        section = None
        for number, raw in enumerate(text.splitlines(), start=1):
            stripped = raw.strip()
            header = re.fullmatch(r"\[([^\]]+)\]", stripped)
            if header:
                section = header.group(1).strip().lower()
                lines.setdefault(section, number)
                continue
            key = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", stripped)
            if section and key and not raw[:1].isspace():
                lines[f"{section}.{key.group(1).strip().lower()}"] = number
        return lines

    def line_of(self, name: str) -> Optional[int]:
        return self._lines.get(name)

    def fail(self, section: str, key: str, message: str) -> ConfigError:
        name = f"{section}.{key}" if key else section
        logger.error("Configuration error at %s: %s", name, message)
        return ConfigError(message, field=name, line=self.line_of(name))

    def check_known(self) -> None:
        for section in self._parser.sections():
            known = _KNOWN_KEYS.get(section)
            if known is None:
                raise self.fail(section, "", f"unknown section [{section}]")
            for key in self._parser[section]:
                if key not in known:
                    raise self.fail(section, key, f"unknown key {key!r}")

    def has(self, section: str) -> bool:
        return self._parser.has_section(section)

    def raw(self, section: str, key: str) -> Optional[str]:
        if not self._parser.has_option(section, key):
            return None
        value = self._parser.get(section, key).strip()
        return value or None

    def _convert(self, section: str, key: str, default, convert: Callable):
        value = self.raw(section, key)
        if value is None:
            return default
        try:
            return convert(value)
        except ValueError as err:
            raise self.fail(section, key, f"invalid value {value!r}: {err}") from err

    def text(self, section: str, key: str, default: Optional[str] = None) -> Optional[str]:
        return self._convert(section, key, default, str)

    def integer(self, section: str, key: str, default: Optional[int] = None) -> Optional[int]:
        return self._convert(section, key, default, int)

    def number(self, section: str, key: str, default: Optional[float] = None) -> Optional[float]:
        return self._convert(section, key, default, float)

    def flag(self, section: str, key: str, default: bool) -> bool:
        value = self.raw(section, key)
        if value is None:
            return default
        lowered = value.lower()
        if lowered not in self._parser.BOOLEAN_STATES:
            raise self.fail(section, key, f"expected a boolean, got {value!r}")
        return self._parser.BOOLEAN_STATES[lowered]

    def choice(self, section: str, key: str, enum: Type[E], default: E) -> E:
        value = self.raw(section, key)
        if value is None:
            return default
        try:
            return enum(value.lower())  # type: ignore[call-arg]
        except ValueError as err:
            options = ", ".join(m.value for m in enum)  # type: ignore[attr-defined]
            raise self.fail(section, key, f"{value!r} is not one of: {options}") from err

    def build(self, section: str, factory: Callable[[], E]) -> E:
        """Run a dataclass constructor, pinning its ``ValueError`` to ``section``."""
        try:
            return factory()
        except ConfigError:
            raise
        except ValueError as err:
            raise self.fail(section, _guess_key(section, str(err)), str(err)) from err


def _guess_key(section: str, message: str) -> str:
    for key in _KNOWN_KEYS.get(section, ()):
        if key in message or key.replace("_", " ") in message:
            return key
    return ""


def _dataset(src: _Source) -> DatasetSpec:
    s = "dataset"
    return src.build(
        s,
        lambda: DatasetSpec(
            source=src.choice(s, "source", DatasetSource, DatasetSource.SYNTHETIC_BLOBS),
            classes=src.integer(s, "classes", 2),
            dims=src.integer(s, "dims", 16),
            n=src.integer(s, "n", 1200),
            separation=src.number(s, "separation", 3.0),
            path=src.text(s, "path"),
            label_column=src.text(s, "label_column"),
            image_path=src.text(s, "image_path"),
            label_path=src.text(s, "label_path"),
            validation_image_path=src.text(s, "validation_image_path"),
            validation_label_path=src.text(s, "validation_label_path"),
            subset_n=src.integer(s, "subset_n", 6000),
            validation_n=src.integer(s, "validation_n"),
            validation_fraction=src.number(s, "validation_fraction", 0.2),
            base_url=src.text(s, "base_url"),
            cache_dir=src.text(s, "cache_dir", "data"),
        ),
    )


def _model(src: _Source) -> ModelSpec:
    s = "model"
    activation = src.choice(s, "activation", Activation, Activation.RELU)
    if activation is Activation.SOFTMAX_OUTPUT:
        raise src.fail(s, "activation", "softmax-output is reserved for the output layer")
    return src.build(
        s,
        lambda: ModelSpec(
            hidden_units=src.integer(s, "hidden_units", 64),
            hidden_layers=src.integer(s, "hidden_layers", 1),
            activation=activation,
            conv_channels=src.integer(s, "conv_channels", 0),
            conv_kernel=src.integer(s, "conv_kernel", 5),
            conv_stride=src.integer(s, "conv_stride", 2),
            image_channels=src.integer(s, "image_channels", 1),
            image_height=src.integer(s, "image_height"),
            image_width=src.integer(s, "image_width"),
        ),
    )


def _privacy(src: _Source, rounds: int) -> PrivacyParams:
    s = "privacy"
    clip_bound = src.number(s, "clip_bound", 4.0)
    sigma = src.number(s, "noise_scale", 6.0)
    policy = src.choice(s, "schedule", SchedulePolicy, SchedulePolicy.FIXED)
    gamma = src.number(s, "gamma")
    sigma_end = src.number(s, "sigma_end")
    step_size = src.integer(s, "step_size", 10)
    floor = src.number(s, "sigma_floor", min(DEFAULT_SIGMA_FLOOR, sigma))

    if policy is SchedulePolicy.FIXED:
        gamma = 0.0
    elif gamma is None:
        if policy is SchedulePolicy.CYCLIC:
            gamma = float(src.integer(s, "cycles", 2))
        elif sigma_end is None:
            raise src.fail(s, "gamma", f"a {policy.value} schedule needs gamma or sigma_end")
        else:
            try:
                gamma = schedule_gamma(policy, sigma, sigma_end, rounds, step_size)
            except ValueError as err:
                raise src.fail(s, "sigma_end", str(err)) from err
            logger.debug("Solved %s gamma=%s from sigma_end=%s", policy.value, gamma, sigma_end)

    def make() -> PrivacyParams:
        schedule = NoiseSchedule(
            sigma,
            policy,
            gamma=gamma,
            step_size=step_size,
            total_rounds=None if policy is SchedulePolicy.FIXED else rounds,
            sigma_floor=floor,
        )
        return PrivacyParams(clip_bound, sigma, src.number(s, "delta", 1e-5), schedule)

    return src.build(s, make)


def _variant(src: _Source) -> AlgorithmVariant:
    kind = src.choice("federation", "algorithm", AlgorithmKind, AlgorithmKind.FED_ALPHA_CDP_SIGMA)
    s = "defense"
    return src.build(
        s,
        lambda: AlgorithmVariant(
            kind,
            prune_percent=src.number(s, "prune_percent", 10.0),
            keep_fraction=src.number(s, "keep_fraction", 0.1),
            prune_threshold=src.number(s, "prune_threshold", 0.0),
            noise_variance=src.number(s, "noise_variance", 0.01),
        ),
    )


def _federation(src: _Source, master_seed: int) -> FederationConfig:
    s = "federation"
    rounds = src.integer(s, "rounds", 100)
    if rounds < 1:
        raise src.fail(s, "rounds", f"rounds must be at least 1, got {rounds}")
    privacy = _privacy(src, rounds)
    variant = _variant(src)
    sensitivity = src.raw("privacy", "sensitivity")
    if sensitivity is None or sensitivity.lower() == "auto":
        mode = SensitivityMode.L2_MAX
    else:
        mode = src.choice("privacy", "sensitivity", SensitivityMode, SensitivityMode.L2_MAX)
    return src.build(
        s,
        lambda: FederationConfig(
            num_clients=src.integer(s, "num_clients", 1000),
            clients_per_round=src.integer(s, "clients_per_round", 100),
            rounds=rounds,
            local_iterations=src.integer(s, "local_iterations", 100),
            batch_size=src.integer(s, "batch_size", 5),
            learning_rate=src.number(s, "learning_rate", 0.1),
            algorithm=variant,
            privacy=privacy,
            sensitivity=mode,
            seed=master_seed,
            noise_placement=src.choice(
                s, "noise_placement", NoisePlacement, NoisePlacement.POST_AVERAGE
            ),
            inject_noise=src.flag(s, "inject_noise", True),
            max_workers=src.integer(s, "max_workers", 1),
        ),
    )


def _stop(src: _Source) -> StopCondition:
    s = "stop"
    return src.build(
        s,
        lambda: StopCondition(
            kind=src.choice(s, "kind", StopKind, StopKind.ROUNDS),
            budget=src.number(s, "budget"),
            method=src.choice(s, "method", AccountingMethod, AccountingMethod.MOMENTS),
            target_accuracy=src.number(s, "target_accuracy"),
        ),
    )


def _attack(src: _Source, master_seed: int) -> Optional[AttackSettings]:
    s = "attack"
    if not src.has(s):
        return None
    return src.build(
        s,
        lambda: AttackSettings(
            AttackConfig(
                surface=src.choice(
                    s, "surface", AttackSurface, AttackSurface.TYPE2_PER_EXAMPLE_GRADIENT
                ),
                seed_kind=src.choice(s, "seed_kind", SeedKind, SeedKind.PATTERNED),
                max_iterations=src.integer(s, "max_iterations", 300),
                attack_lr=src.number(s, "attack_lr", 0.05),
                success_rmse=src.number(s, "success_rmse", 0.1),
                optimizer=src.choice(
                    s, "optimizer", AttackOptimizer, AttackOptimizer.GRADIENT_DESCENT
                ),
                seed=master_seed,
            ),
            victims=src.integer(s, "victims", 20),
        ),
    )


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate the text of a configuration file."""
    src = _Source(text)
    src.check_known()
    s = "experiment"
    master_seed = src.integer(s, "master_seed", 0)
    if master_seed < 0:
        raise src.fail(s, "master_seed", f"master_seed must be non-negative, got {master_seed}")
    client_size = src.integer("federation", "client_size")
    if client_size is not None and client_size < 1:
        raise src.fail(
            "federation", "client_size", f"client_size must be positive, got {client_size}"
        )
    return ExperimentConfig(
        name=src.text(s, "name", "experiment"),
        master_seed=master_seed,
        output_dir=Path(src.text(s, "output_dir", "results")),
        dataset=_dataset(src),
        model=_model(src),
        federation=_federation(src, master_seed),
        stop=_stop(src),
        client_size=client_size,
        attack=_attack(src, master_seed),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and parse the configuration file at ``path``."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        logger.error("Cannot read configuration %s: %s", path, err)
        raise ConfigError(f"cannot read configuration {path}: {err.strerror}") from err
    return parse_config(text)
