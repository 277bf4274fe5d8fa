"""Command line front end: synth, train, eval, gradcheck, ablate, report."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

from ..errors import ConfigError, ContractError, InputError, NonFiniteError, ShapeError
from ..evalkit.io import read_boxes
from ..evalkit.metrics import MetricReport, evaluate
from .ablate import AblationError, AblationRow, ablate
from .config import load_config
from .data import synth_splits
from .gradsuite import SuiteEntry, run_suite
from .report import render_run
from .runner import evaluate_run, run_training, write_report

log = logging.getLogger("epbcdet")

HANDLED = (ConfigError, ContractError, InputError, NonFiniteError, ShapeError, AblationError, OSError)


def _summary(report: MetricReport, names: Sequence[str] | None = None) -> str:
    lines = [f"{'class':>12} {'truths':>7} {'AP50':>7} {'AP50-95':>8}"]
    for c in report.classes:
        name = names[c] if names and c < len(names) else str(c)
        lines.append(f"{name:>12} {report.n_truth[c]:7d} {report.ap[c][report.thresholds.index(0.5)]:7.4f} "
                     f"{report.ap[c].mean():8.4f}")
    lines.append(f"{'all':>12} {sum(report.n_truth.values()):7d} {report.map50:7.4f} {report.map5095:8.4f}")
    lines.append(f"precision {report.precision:.4f}  recall {report.recall:.4f}  "
                 f"(confidence >= {report.conf_threshold})")
    if report.absent_classes:
        lines.append(f"classes predicted without ground truth: {report.absent_classes}")
    return "\n".join(lines)


def cmd_synth(a) -> int:
    splits = synth_splits(a.out, a.seed, a.n_train, a.n_val, a.resolution, a.classes)
    for k, m in splits.items():
        print(f"{k}: {len(m.items)} images, {sum(len(i.boxes) for i in m.items)} boxes -> {Path(a.out) / k}")
    return 0


def _run_config(a):
    overrides = list(a.set or [])
    if getattr(a, "epochs", None) is not None:
        overrides.append(f"train.epochs={a.epochs}")
    if getattr(a, "name", None):
        overrides.append(f'name="{a.name}"')
    if getattr(a, "out_dir", None):
        overrides.append(f'out_dir="{a.out_dir}"')
    if getattr(a, "data", None):
        overrides.append(f'data="{a.data}"')
    return load_config(a.config, overrides)


def cmd_train(a) -> int:
    run = _run_config(a)
    t0 = time.perf_counter()

    def show(rec):
        print(f"epoch {rec.epoch:3d}  box {rec.box_loss:.4f}  cls {rec.cls_loss:.4f}  P {rec.precision:.3f}  "
              f"R {rec.recall:.3f}  mAP50 {rec.map50:.3f}  mAP50-95 {rec.map5095:.3f}", flush=True)

    out = run_training(run, on_epoch=show)
    print(_summary(out.report, out.class_names))
    print(f"params {out.cost.params}  FLOPs {out.cost.flops}  wall {time.perf_counter() - t0:.1f}s")
    print(f"run directory: {out.run_dir}")
    return 0


def cmd_eval(a) -> int:
    if a.run:
        report, names = evaluate_run(a.run, a.checkpoint, a.out)
    else:
        if not (a.pred and a.truth):
            raise ConfigError("eval needs --run DIR or both --pred and --truth")
        preds = read_boxes(a.pred, with_confidence=True)
        truths = read_boxes(a.truth, with_confidence=False)
        report = evaluate(preds, truths, conf_threshold=a.conf)
        names = None
        if a.out:
            out = Path(a.out)
            out.mkdir(parents=True, exist_ok=True)
            write_report(out, report, None)
    print(_summary(report, names))
    return 0


def cmd_gradcheck(a) -> int:
    tiers = tuple(a.tier) if a.tier else ("primitive", "composite", "end-to-end")

    def show(e: SuiteEntry):
        status = "ok  " if e.passed else "FAIL"
        print(f"{status} {e.tier:<10} {e.name:<48} err {e.max_rel_error:.3e}  tol {e.tol:.0e}  "
              f"coords {e.coords:<7d} {e.seconds:.2f}s", flush=True)

    t0 = time.perf_counter()
    res = run_suite(seed=a.seed, tiers=tiers, progress=show)
    failed = [e for e in res if not e.passed]
    print(f"{len(res) - len(failed)}/{len(res)} checks passed in {time.perf_counter() - t0:.1f}s")
    return 1 if failed else 0


def cmd_ablate(a) -> int:
    run = _run_config(a)

    def show(r: AblationRow):
        print(f"{r.label:<34} mAP50 {r.map50:.4f}  params {r.params}  FLOPs {r.flops}", flush=True)

    table = ablate(run, epochs=a.sweep_epochs, out_dir=a.out, extra_rows=not a.no_extra, progress=show)
    print(table.markdown())
    return 0


def cmd_report(a) -> int:
    written = render_run(a.run_dir)
    if not written:
        raise InputError(f"{a.run_dir}: no pr_curve.csv, confusion.csv or history.csv to render")
    for p in written:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="epbcdet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic train/val dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n-train", type=int, default=200)
    s.add_argument("--n-val", type=int, default=50)
    s.add_argument("--resolution", type=int, default=96)
    s.add_argument("--classes", type=int, default=5)
    s.set_defaults(fn=cmd_synth)

    def run_args(sp):
        sp.add_argument("--config", help="run config JSON")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, e.g. train.epochs=5")
        sp.add_argument("--data", help="dataset root with train/ and val/")
        sp.add_argument("--name")
        sp.add_argument("--out-dir")

    t = sub.add_parser("train", help="train one configuration and write a run directory")
    run_args(t)
    t.add_argument("--epochs", type=int)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="metrics for a run checkpoint or for prediction/truth files")
    e.add_argument("--run", help="run directory")
    e.add_argument("--checkpoint")
    e.add_argument("--pred", help="predictions: image class conf x1 y1 x2 y2")
    e.add_argument("--truth", help="ground truth: image class x1 y1 x2 y2")
    e.add_argument("--conf", type=float, default=0.25, help="confidence for P/R and confusion")
    e.add_argument("--out", help="write metrics/PR/confusion CSV and SVG here")
    e.set_defaults(fn=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tier", action="append", choices=("primitive", "composite", "end-to-end"))
    g.set_defaults(fn=cmd_gradcheck)

    ab = sub.add_parser("ablate", help="16-combination module sweep plus first-block variants")
    run_args(ab)
    ab.add_argument("--epochs", dest="sweep_epochs", type=int)
    ab.add_argument("--out", help="sweep directory")
    ab.add_argument("--no-extra", action="store_true", help="skip the first-block variant rows")
    ab.set_defaults(fn=cmd_ablate)

    r = sub.add_parser("report", help="re-render SVGs of a run directory from its CSVs")
    r.add_argument("run_dir")
    r.set_defaults(fn=cmd_report)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except HANDLED as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
