"""PyFedCDP.

Federated learning with per-example differential privacy: a NumPy network
core, noise schedules, privacy accountants, a federation simulator and a
gradient leakage attack to measure what the noise protects.
"""

from .lab import Laboratory
from .accountant import (
    LedgerEntry,
    PrivacyLedger,
    PrivacySpend,
    account,
    account_all,
)
from .attack import AttackConfig, AttackReport, CampaignReport, attack_campaign, reconstruct
from .config import ExperimentConfig, load_config, parse_config
from .datasets import Dataset, DatasetSpec, load_dataset
from .errors import (
    AccountingError,
    ConfigError,
    DatasetError,
    DegenerateSensitivityError,
    NumericError,
    ShapeError,
)
from .federation import (
    AlgorithmVariant,
    FederationConfig,
    StopCondition,
    TrainingReport,
    run_training,
)
from .noise import NoiseSchedule, PrivacyParams
from .types import (
    AccountingMethod,
    AlgorithmKind,
    AttackOptimizer,
    AttackSurface,
    DatasetSource,
    Mechanism,
    NoisePlacement,
    SchedulePolicy,
    SeedKind,
    SensitivityMode,
    StopKind,
)

__version__ = "0.1.0"

__all__ = [
    "Laboratory",
    "AccountingError",
    "AccountingMethod",
    "AlgorithmKind",
    "AlgorithmVariant",
    "AttackConfig",
    "AttackOptimizer",
    "AttackReport",
    "AttackSurface",
    "CampaignReport",
    "ConfigError",
    "Dataset",
    "DatasetError",
    "DatasetSource",
    "DatasetSpec",
    "DegenerateSensitivityError",
    "ExperimentConfig",
    "FederationConfig",
    "LedgerEntry",
    "Mechanism",
    "NoisePlacement",
    "NoiseSchedule",
    "NumericError",
    "PrivacyLedger",
    "PrivacyParams",
    "PrivacySpend",
    "SchedulePolicy",
    "SeedKind",
    "SensitivityMode",
    "ShapeError",
    "StopCondition",
    "StopKind",
    "TrainingReport",
    "account",
    "account_all",
    "attack_campaign",
    "load_config",
    "load_dataset",
    "parse_config",
    "reconstruct",
    "run_training",
]
