"""Deterministic price-volume dynamics with an embedded market maker."""
from .core import (
    MarketState,
    ModelParams,
    SampledPath,
    SingularityError,
    StepSizeUnderflow,
    Termination,
    Tolerances,
    Trajectory,
    integrate,
    matched_initial_state,
    motion_integral,
    rhs,
)

__version__ = "0.1.0"
