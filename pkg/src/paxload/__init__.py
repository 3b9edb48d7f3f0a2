"""Closed-loop passenger load estimation from noisy multi-source counts."""

__version__ = "0.1.0"

from .core import (
    Capacity,
    DEFAULT_CAPACITY,
    StepTrace,
    StopEvent,
    Trajectory,
    Trip,
    shadow_infeasibility_rate,
    shadow_trajectory,
)
from .errors import ContractViolation, CorpusInvariantError, InputError
from .fusion import TrustParams, disagreement, fuse, trust_weight
from .projection import e_phys_rate, project

__all__ = [
    "Capacity",
    "DEFAULT_CAPACITY",
    "StepTrace",
    "StopEvent",
    "Trajectory",
    "Trip",
    "shadow_infeasibility_rate",
    "shadow_trajectory",
    "ContractViolation",
    "CorpusInvariantError",
    "InputError",
    "TrustParams",
    "disagreement",
    "fuse",
    "trust_weight",
    "e_phys_rate",
    "project",
    "__version__",
]
