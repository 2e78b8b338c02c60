"""Sliding-window factor-graph estimator."""
from .config import EstimatorConfig, load_config, parse_config
from .pipeline import Estimator, run_dataset
from .solver import SolverConfig, solve

__all__ = ["Estimator", "EstimatorConfig", "SolverConfig", "load_config", "parse_config",
           "run_dataset", "solve"]
