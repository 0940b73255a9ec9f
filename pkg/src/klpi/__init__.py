"""KL-regularized policy iteration with decoupled Gaussian updates."""

from .config import ConfigError, TrainConfig, load_config, parse_config, serialize_config
from .trainer import MetricsRow, RunResult, TrainingAborted, run, seed_everything

__all__ = [
    "ConfigError", "MetricsRow", "RunResult", "TrainConfig", "TrainingAborted", "load_config",
    "parse_config", "run", "seed_everything", "serialize_config",
]
__version__ = "0.1.0"
