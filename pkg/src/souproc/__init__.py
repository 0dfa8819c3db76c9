"""Branching Ornstein-Uhlenbeck particle systems interacting with their center of mass."""
from .model import (ConfigError, GaussianSpec, InitialMeasure, Mode, SimConfig, ValidatedConfig,
                    extinction_probability, offspring_probabilities, stationary_law, validate_config)

__version__ = "0.1.0"

__all__ = ["ConfigError", "GaussianSpec", "InitialMeasure", "Mode", "SimConfig", "ValidatedConfig",
           "extinction_probability", "offspring_probabilities", "stationary_law", "validate_config",
           "__version__"]
