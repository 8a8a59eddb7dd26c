"""Simulation and attack configuration constants and enums."""
import os
from enum import Enum, IntEnum
from dataclasses import dataclass


class PropertyKind(str, Enum):
    """Client property the attacker reconstructs."""
    MEMBERSHIP = "membership"
    INVERSION = "inversion"
    ASCENT = "ascent"


class ClientRole(str, Enum):
    """Ground-truth role of a client in a simulated federation."""
    HONEST = "honest"
    MEMBER = "member"
    ASCENT_ATTACKER = "ascent"
    INVERSION_ATTACKER = "inversion"

    @property
    def is_positive(self) -> bool:
        return self is not ClientRole.HONEST


class Method(str, Enum):
    """Property reconstruction methods."""
    BASELINE = "baseline"
    OLS = "ols"
    REG = "reg"
    PROLIN = "prolin"


class InitStrategy(str, Enum):
    WARM = "warm"
    UNIFORM = "uniform"


class GammaMode(str, Enum):
    """How the loss weights of the relaxed objective are chosen."""
    BALANCED = "balanced"
    FIXED = "fixed"


class Selection(str, Enum):
    """Turning relaxed tau into binary labels."""
    THRESHOLD = "threshold"
    TOP_K = "top_k"


class ExitCode(IntEnum):
    OK = 0
    STAGE_FAILURE = 1
    BAD_CONFIG = 2
    ORACLE_MISMATCH = 3


@dataclass
class GammaWeights:
    """Weights of the likelihood, regression and aggregate losses."""
    gamma1: float = 1.0
    gamma2: float = 1.0
    gamma3: float = 1.0

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.gamma1, self.gamma2, self.gamma3)


# Numerical tolerances
SVD_RELATIVE_CUTOFF = 1e-10  # singular values below cutoff * s_max are treated as zero
SIGMA_FLOOR = 1e-6
OVL_SIGMA_SPAN = 8.0  # quadrature range in combined standard deviations

# Attack defaults
DEFAULT_LAMBDA = 5.0
DEFAULT_THRESHOLD = 0.5
DEFAULT_TRAIN_FRACTION = 0.8
DEFAULT_EVAL_EVERY = 5
DEFAULT_MIN_POSITIVES = 2

# Secure aggregation
DEFAULT_FIXED_POINT_BITS = 16
MAX_FIELD_BITS = 62  # keeps modular sums inside int64

# Run archive
RUNS_DIR = os.getenv("FEDPROBE_RUNS_DIR", "runs")
DATABASE_URL_OVERRIDE = os.getenv("FEDPROBE_DATABASE_URL")
ARCHIVE_DB_NAME = "archive.db"
CSV_FLOAT_FORMAT = "%.17g"

# Parallelism for client updates within a round
WORKERS = int(os.getenv("FEDPROBE_WORKERS", "1"))

LOG_LEVEL = os.getenv("FEDPROBE_LOG_LEVEL", "INFO")
