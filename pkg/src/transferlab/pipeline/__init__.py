"""Pre-training, frozen fine-tuning, evaluation, sweeps and results tables."""

from transferlab.pipeline.experiment import (
    TaskData,
    build_corpus,
    finetune_frozen,
    load_report,
    prepare,
    pretrain,
    run_experiment,
    verify_freeze,
)
from transferlab.pipeline.manifest import Manifest
from transferlab.pipeline.report import ResultsTable, emit_table, format_count
from transferlab.pipeline.sweep import cell_manifest, parse_grid, run_sweep
from transferlab.pipeline.train import TrainBudget, TrainResult, train

__all__ = [
    "Manifest",
    "ResultsTable",
    "TaskData",
    "TrainBudget",
    "TrainResult",
    "build_corpus",
    "cell_manifest",
    "emit_table",
    "finetune_frozen",
    "format_count",
    "load_report",
    "parse_grid",
    "prepare",
    "pretrain",
    "run_experiment",
    "run_sweep",
    "train",
    "verify_freeze",
]
