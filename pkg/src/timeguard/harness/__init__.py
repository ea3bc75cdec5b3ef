"""Experiment configuration, seeded runs, metrics and the CLI."""

from .config import (
    ConfigError,
    ExperimentConfig,
    ParseError,
    RangeError,
    load_config,
    parse_config,
)
from .metrics import MetricsReport, ReportFormat, compute_false_positives, emit_report
from .runner import run_experiment, run_matrix, run_repeated, simulate, sweep_load

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "MetricsReport",
    "ParseError",
    "RangeError",
    "ReportFormat",
    "compute_false_positives",
    "emit_report",
    "load_config",
    "parse_config",
    "run_experiment",
    "run_matrix",
    "run_repeated",
    "simulate",
    "sweep_load",
]
