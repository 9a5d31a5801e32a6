"""Experiment configuration, presets, runner and command-line interface."""
from .config import ExperimentConfig, parse_config, render_config
from .presets import PRESETS, get_preset, presets, run_preset
from .runner import SUMMARY_FIELDS, execute, run_experiment

__all__ = [
    "ExperimentConfig",
    "PRESETS",
    "SUMMARY_FIELDS",
    "execute",
    "get_preset",
    "parse_config",
    "presets",
    "render_config",
    "run_experiment",
    "run_preset",
]
