"""One training run end to end: data, model, training, report bundle."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from ..core.params import ParamSet
from ..detector.flops import ModelCost, count_params_flops
from ..detector.model import Detector, build_model
from ..detector.train import EpochRecord, Sample, TrainResult, train, validate
from ..errors import ConfigError, InputError
from ..evalkit.io import write_confusion_csv, write_metrics_csv, write_pr_csv
from ..evalkit.metrics import MetricReport
from .config import RunConfig
from .data import DatasetManifest, load_dataset, synth_splits, to_samples
from .report import render_run

CONFIG_FILE = "config.json"
CHECKPOINT_FILE = "checkpoint.bin"


@dataclass
class RunOutcome:
    run_dir: Path
    config: RunConfig
    result: TrainResult
    report: MetricReport
    cost: ModelCost
    class_names: list[str]


def dataset_splits(run: RunConfig, run_dir: Path) -> tuple[DatasetManifest, DatasetManifest]:
    """Train/val manifests: from ``run.data`` or synthesised into the run directory."""
    if run.data is None:
        s = run.synth
        splits = synth_splits(run_dir / "data", s.seed, s.n_train, s.n_val, s.resolution, s.classes)
        return splits["train"], splits["val"]
    root = Path(run.data)
    if not root.is_dir():
        raise InputError(f"dataset root {root} does not exist")
    if (root / "train").is_dir():
        tr = load_dataset(root / "train", "train")
        va = load_dataset(root / "val", "val") if (root / "val").is_dir() else tr
        return tr, va
    ds = load_dataset(root)
    return ds, ds


def load_samples(run: RunConfig, run_dir: Path) -> tuple[list[Sample], list[Sample], list[str]]:
    tr_m, va_m = dataset_splits(run, run_dir)
    nc = run.model.num_classes
    for m in (tr_m, va_m):
        for it in m.items:
            for b in it.boxes:
                if b.class_id >= nc:
                    raise ConfigError(f"{it.label_path}: class {b.class_id} but the model has {nc} classes")
    tr, _ = to_samples(tr_m, run.model.resolution)
    va, _ = to_samples(va_m, run.model.resolution)
    names = tr_m.class_names or [str(c) for c in range(nc)]
    return tr, va, names


def write_report(run_dir: Path, report: MetricReport, names: list[str]) -> None:
    write_metrics_csv(report, run_dir / "metrics.csv", names)
    write_pr_csv(report, run_dir / "pr_curve.csv", names)
    write_confusion_csv(report, run_dir / "confusion.csv", names)
    render_run(run_dir)


def run_training(run: RunConfig, run_dir: str | Path | None = None,
                 on_epoch: Callable[[EpochRecord], None] | None = None) -> RunOutcome:
    run_dir = Path(run_dir) if run_dir is not None else run.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    run.save(run_dir / CONFIG_FILE)
    tr, va, names = load_samples(run, run_dir)
    model = build_model(run.model, seed=run.seed)
    cost = count_params_flops(model)
    result = train(model, tr, run.train, val=va, out_dir=run_dir, validate_every=run.validate_every,
                   on_epoch=on_epoch)
    report = result.report
    if report is None:  # zero epochs
        report, _ = validate(model, va, run.train)
        ParamSet.from_module(model).save(run_dir / CHECKPOINT_FILE)
    write_report(run_dir, report, names)
    (run_dir / "cost.json").write_text(json.dumps({
        "params": cost.params, "flops": cost.flops,
        "params_by_group": cost.params_by_group, "flops_by_group": cost.flops_by_group}, indent=2) + "\n")
    return RunOutcome(run_dir, run, result, report, cost, names)


def load_run_model(run_dir: str | Path, checkpoint: str | Path | None = None) -> tuple[RunConfig, Detector]:
    run_dir = Path(run_dir)
    cfg_path = run_dir / CONFIG_FILE
    if not cfg_path.exists():
        raise InputError(f"{run_dir}: no {CONFIG_FILE}")
    run = RunConfig.from_dict(json.loads(cfg_path.read_text()))
    model = build_model(run.model, seed=run.seed)
    ckpt = Path(checkpoint) if checkpoint is not None else run_dir / CHECKPOINT_FILE
    if not ckpt.exists():
        raise InputError(f"checkpoint {ckpt} not found")
    ParamSet.from_module(model).load(ckpt)
    return run, model


def evaluate_run(run_dir: str | Path, checkpoint: str | Path | None = None,
                 out_dir: str | Path | None = None) -> tuple[MetricReport, list[str]]:
    """Validation metrics of a saved run, recomputed from its checkpoint."""
    run_dir = Path(run_dir)
    run, model = load_run_model(run_dir, checkpoint)
    _, va, names = load_samples(run, run_dir)
    report, _ = validate(model, va, run.train)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_report(out, report, names)
    return report, names
