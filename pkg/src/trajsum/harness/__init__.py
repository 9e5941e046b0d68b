"""Simulation sweeps, dataset analysis and the command-line interface."""
from .analyze import AnalysisReport, AnalyzeOptions, analyze
from .config import ConfigError, ScenarioSpec, SweepConfig, load_config, parse_config
from .io import IngestError, ingest_csv, write_dataset_csv
from .runner import RejectionRow, run_cell, run_replicate, run_sweep

__all__ = ["AnalysisReport", "AnalyzeOptions", "analyze", "ConfigError", "ScenarioSpec", "SweepConfig",
           "load_config", "parse_config", "IngestError", "ingest_csv", "write_dataset_csv",
           "RejectionRow", "run_cell", "run_replicate", "run_sweep"]
