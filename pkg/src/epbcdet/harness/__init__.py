"""Experiment harness: data, configs, runs, ablation sweep, gradient suite, plots, CLI."""
from .ablate import TABLE_ORDER, AblationError, AblationRow, AblationTable, ablate, combo_label
from .config import RunConfig, SynthSpec, apply_overrides, load_config
from .data import (CLASS_NAMES, DatasetItem, DatasetManifest, dataset_checksum, load_dataset,
                   parse_label_file, synth_dataset, synth_splits, to_samples)
from .gradsuite import TOLERANCES, SuiteEntry, run_suite
from .images import Affine, letterbox, read_image, read_ppm, write_ppm
from .report import confusion_svg, history_svg, pr_curve_svg, render_run
from .runner import RunOutcome, evaluate_run, load_run_model, run_training

__all__ = [
    "TABLE_ORDER", "AblationError", "AblationRow", "AblationTable", "ablate", "combo_label",
    "RunConfig", "SynthSpec", "apply_overrides", "load_config",
    "CLASS_NAMES", "DatasetItem", "DatasetManifest", "dataset_checksum", "load_dataset",
    "parse_label_file", "synth_dataset", "synth_splits", "to_samples",
    "TOLERANCES", "SuiteEntry", "run_suite",
    "Affine", "letterbox", "read_image", "read_ppm", "write_ppm",
    "confusion_svg", "history_svg", "pr_curve_svg", "render_run",
    "RunOutcome", "evaluate_run", "load_run_model", "run_training",
]
