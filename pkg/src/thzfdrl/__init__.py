"""Federated DDPG beamforming for multi-cell THz downlinks."""

from .errors import (ConfigError, ConstraintError, DimensionError, DomainError, InfeasibleError,
                     ProtocolError, ThzError)
from .experiment import ExperimentConfig, run_algorithm1, run_monte_carlo, sweep

__all__ = [
    "ConfigError", "ConstraintError", "DimensionError", "DomainError", "InfeasibleError",
    "ProtocolError", "ThzError", "ExperimentConfig", "run_algorithm1", "run_monte_carlo", "sweep",
]
__version__ = "0.1.0"
