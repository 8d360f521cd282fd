"""Robust multi-robot safety filters with learned input disturbances."""
from .config import ExperimentConfig, load_config
from .harness import compute_metrics, run_explore, run_swap

__all__ = ["ExperimentConfig", "load_config", "compute_metrics", "run_explore", "run_swap"]
