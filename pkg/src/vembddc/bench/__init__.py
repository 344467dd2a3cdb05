"""Sinker benchmark campaign: configuration, runner, reports and plots."""

from .config import ConfigError, ExperimentConfig, load_config, parse_nsub
from .report import csv_text, details_text, emit_report, parse_csv
from .runner import CSV_COLUMNS, ReportRow, ReportTable, build_mesh, run_experiment_matrix
from .sinkers import SinkerField, body_force, chi, place_sinkers, viscosity
from .svg import emit_svg, viscosity_classes

__all__ = [
    "CSV_COLUMNS",
    "ConfigError",
    "ExperimentConfig",
    "ReportRow",
    "ReportTable",
    "SinkerField",
    "body_force",
    "build_mesh",
    "chi",
    "csv_text",
    "details_text",
    "emit_report",
    "emit_svg",
    "load_config",
    "parse_csv",
    "parse_nsub",
    "place_sinkers",
    "run_experiment_matrix",
    "viscosity",
    "viscosity_classes",
]
