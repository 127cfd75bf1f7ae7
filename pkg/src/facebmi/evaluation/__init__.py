from .config import ExperimentConfig, derive_seed
from .metrics import (
    EvaluationReport,
    PredictionRow,
    PredictionSet,
    UndefinedCorrelationError,
    constant_baseline_mae,
    grouped_report,
    mae,
    pearson,
)
from .runner import ExperimentResult, Workspace, run_experiment
from .tables import ComparisonTable, emit_tables

__all__ = [
    "ComparisonTable",
    "EvaluationReport",
    "ExperimentConfig",
    "ExperimentResult",
    "PredictionRow",
    "PredictionSet",
    "UndefinedCorrelationError",
    "Workspace",
    "constant_baseline_mae",
    "derive_seed",
    "emit_tables",
    "grouped_report",
    "mae",
    "pearson",
    "run_experiment",
]
