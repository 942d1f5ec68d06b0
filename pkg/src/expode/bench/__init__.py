"""Benchmark harness: study configs, sweeps, CSV output, figures, CLI."""

from .config import ConfigError, StudyConfig, VerifyAssertion, load_study, parse_overrides
from .csvout import CSV_HEADER, emit_csv, emit_orders_csv, read_report
from .runner import (
    OrderFit,
    StudyFatalError,
    StudyReport,
    StudyRow,
    fit_orders,
    make_problem,
    reference_solution,
    run_convergence,
    run_precision,
    run_study,
)

__all__ = [
    "CSV_HEADER",
    "ConfigError",
    "OrderFit",
    "StudyConfig",
    "StudyFatalError",
    "StudyReport",
    "StudyRow",
    "VerifyAssertion",
    "emit_csv",
    "emit_orders_csv",
    "fit_orders",
    "load_study",
    "make_problem",
    "parse_overrides",
    "read_report",
    "reference_solution",
    "run_convergence",
    "run_precision",
    "run_study",
]
