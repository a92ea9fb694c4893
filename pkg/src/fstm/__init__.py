"""GreenLab-style tree growth with structural factorization and pattern-based calibration."""

from .config import (
    ConfigError,
    ModelParameters,
    OrganogenesisRules,
    load_config,
    normalize,
    validate,
)
from .engine import SimulationTrace, simulate
from .structure import AxisClassKey, build_counts, expand_explicit, leaves_above

__all__ = [
    "AxisClassKey",
    "ConfigError",
    "ModelParameters",
    "OrganogenesisRules",
    "SimulationTrace",
    "build_counts",
    "expand_explicit",
    "leaves_above",
    "load_config",
    "normalize",
    "simulate",
    "validate",
]
