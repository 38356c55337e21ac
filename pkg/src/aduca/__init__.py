"""Adaptive delayed-update cyclic block solver for monotone variational inequalities."""

from .blocks import BlockPartition, DiagonalScaling, UsageError, inverse_scaled_norm, prefix_splice, scaled_norm
from .kernels import BACKEND
from .problems import BilinearSaddle, LinearVI, QuadraticVI, SeparableRegularizer, SvmSaddle, check_monotone
from .solver import (ConfigError, DerivedConstants, SolverConfig, StopRule, check_step_conditions,
                     derive_constants, initialize, run)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BilinearSaddle", "BlockPartition", "ConfigError", "DerivedConstants", "DiagonalScaling",
    "LinearVI", "QuadraticVI", "SeparableRegularizer", "SolverConfig", "StopRule", "SvmSaddle",
    "UsageError", "check_monotone", "check_step_conditions", "derive_constants", "initialize",
    "inverse_scaled_norm", "prefix_splice", "run", "scaled_norm",
]
