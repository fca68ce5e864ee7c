"""Type definitions shared across pyfedcdp."""
from enum import Enum, IntEnum
from typing import TypedDict


class SchedulePolicy(Enum):
    """Noise-scale decay policies."""
    FIXED = "fixed"
    LINEAR = "linear"
    STAIRCASE = "staircase"
    EXPONENTIAL = "exponential"
    CYCLIC = "cyclic"


class SensitivityMode(Enum):
    """How the per-iteration sensitivity S is chosen."""
    FIXED_CLIP = "fixed_clip"
    L2_MAX = "l2_max"


class Mechanism(Enum):
    """Granularity of a noise injection recorded in the ledger."""
    PER_EXAMPLE = "per_example"
    PER_CLIENT = "per_client"


class AccountingMethod(Enum):
    """Privacy composition methods."""
    BASE = "base"
    ADVANCED = "advanced"
    ZCDP = "zcdp"
    MOMENTS = "moments"
    PARALLEL = "parallel"


class AlgorithmKind(Enum):
    """Federated training variants."""
    NON_PRIVATE = "non_private"
    FED_SDP_SERVER = "fed_sdp_server"
    FED_SDP_CLIENT = "fed_sdp_client"
    FED_CDP = "fed_cdp"
    FED_ALPHA_CDP = "fed_alpha_cdp"
    FED_ALPHA_CDP_SIGMA = "fed_alpha_cdp_sigma"
    PRUNE_THRESHOLD = "prune_threshold"
    PRUNE_RANDOM_DSSGD = "prune_random_dssgd"
    ADDITIVE_NOISE = "additive_noise"


class NoisePlacement(Enum):
    """Where per-example noise enters the batch gradient."""
    POST_AVERAGE = "post_average"
    PER_EXAMPLE_THEN_AVERAGE = "per_example_then_average"
    SUM_THEN_AVERAGE = "sum_then_average"


class AttackSurface(Enum):
    """Points at which an adversary can observe gradients."""
    TYPE0_SERVER_SHARED_UPDATE = "type0_server_shared_update"
    TYPE1_CLIENT_POST_TRAINING_UPDATE = "type1_client_post_training_update"
    TYPE2_PER_EXAMPLE_GRADIENT = "type2_per_example_gradient"


class SeedKind(Enum):
    """Initialization of the attacker's dummy input."""
    RANDOM = "random"
    PATTERNED = "patterned"


class AttackOptimizer(Enum):
    """Optimizer driving the gradient-matching loss."""
    GRADIENT_DESCENT = "gradient_descent"
    LBFGS = "lbfgs"


class StopKind(Enum):
    """Training stop conditions."""
    ROUNDS = "rounds"
    BUDGET = "budget"
    TARGET_ACCURACY = "target_accuracy"


class DatasetSource(Enum):
    """Supported dataset origins."""
    SYNTHETIC_BLOBS = "synthetic_blobs"
    CSV = "csv"
    IDX_IMAGES = "idx_images"


class Stream(IntEnum):
    """Independent random streams derived from the master seed."""
    DATA = 0
    INIT = 1
    SAMPLING = 2
    LOCAL = 3
    NOISE = 4
    SERVER_NOISE = 5
    DEFENSE = 6
    ATTACK = 7


class ComparisonRow(TypedDict, total=False):
    """One row of a consolidated comparison table."""
    config: str
    algorithm: str
    dataset_hash: str
    final_accuracy: float
    rounds_used: int
    eps_moments: float
    eps_zcdp: float
    eps_adv: float
    eps_base: float
    surface: str
    asr: float
    mean_distance: float


class AttackSummaryRow(TypedDict):
    """Aggregate outcome of an attack campaign."""
    surface: str
    algorithm: str
    asr: float
    mean_distance: float
    mean_iterations: float
