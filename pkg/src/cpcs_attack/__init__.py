"""Attack synthesis and defense analysis for linear cyber-physical control loops."""

from .estimation import DetectorConfig, MitigationStrategy, simulate_loop
from .system_model import NoiseSpec, SteadyStateKalman, SystemModel, solve_riccati, validate_model

__all__ = [
    "DetectorConfig",
    "MitigationStrategy",
    "NoiseSpec",
    "SteadyStateKalman",
    "SystemModel",
    "simulate_loop",
    "solve_riccati",
    "validate_model",
]

__version__ = "0.1.0"
