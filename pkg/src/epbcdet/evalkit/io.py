"""Prediction/truth text files and CSV emission for metric reports.

Prediction lines: ``image_id class_id confidence x1 y1 x2 y2``.
Truth lines drop the confidence column.
"""
from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import numpy as np

from ..errors import InputError
from .boxes import DetectionBox
from .metrics import MetricReport


def read_boxes(path: str | Path, with_confidence: bool) -> dict[str, list[DetectionBox]]:
    path = Path(path)
    want = 7 if with_confidence else 6
    out: dict[str, list[DetectionBox]] = defaultdict(list)
    try:
        text = path.read_text()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != want:
            raise InputError(f"{path}:{lineno}: expected {want} fields, got {len(parts)}")
        try:
            cls = int(parts[1])
            vals = [float(v) for v in parts[2:]]
            conf = vals.pop(0) if with_confidence else 1.0
            out[parts[0]].append(DetectionBox(cls, conf, *vals))
        except (ValueError, InputError) as e:
            raise InputError(f"{path}:{lineno}: {e}") from e
    return dict(out)


def write_boxes(path: str | Path, boxes: dict[str, list[DetectionBox]], with_confidence: bool) -> None:
    lines = []
    for image_id in sorted(boxes):
        for b in boxes[image_id]:
            conf = f" {b.confidence!r}" if with_confidence else ""
            lines.append(f"{image_id} {b.class_id}{conf} {b.x1!r} {b.y1!r} {b.x2!r} {b.y2!r}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def _name(names: list[str] | None, c: int) -> str:
    return names[c] if names and 0 <= c < len(names) else str(c)


def write_metrics_csv(report: MetricReport, path: str | Path, class_names: list[str] | None = None) -> None:
    thr_cols = [f"ap{int(round(t * 100))}" for t in report.thresholds]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class_id", "name", "n_truth", "tp", "fp", "fn", "tn", "precision", "recall",
                    "map50", "map5095", *thr_cols])
        for c in report.classes:
            k = report.counts[c]
            ap = report.ap[c]
            w.writerow([c, _name(class_names, c), report.n_truth[c], k.tp, k.fp, k.fn, k.tn,
                        repr(k.precision), repr(k.recall), repr(float(ap[report.thresholds.index(0.5)])),
                        repr(float(np.mean(ap))), *[repr(float(a)) for a in ap]])
        t = report.counts.total()
        w.writerow(["all", "all", sum(report.n_truth.values()), t.tp, t.fp, t.fn, t.tn,
                    repr(t.precision), repr(t.recall), repr(report.map50), repr(report.map5095),
                    *[repr(report.map_at(x)) for x in report.thresholds]])


def write_pr_csv(report: MetricReport, path: str | Path, class_names: list[str] | None = None) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["class", "threshold", "recall", "precision", "envelope"])
        series = [(_name(class_names, c), report.curves[c]) for c in report.classes if c in report.curves]
        series.append(("micro", report.micro_curve))
        for name, cv in series:
            for t, r, p, e in zip(cv.thresholds, cv.recall, cv.precision, cv.envelope):
                w.writerow([name, repr(float(t)), repr(float(r)), repr(float(p)), repr(float(e))])


def write_confusion_csv(report: MetricReport, path: str | Path, class_names: list[str] | None = None,
                        normalized: bool = True) -> None:
    cm = report.confusion_normalized if normalized else report.confusion
    names = [_name(class_names, c) for c in report.confusion_labels] + ["background"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["actual\\predicted", *names])
        for name, row in zip(names, cm):
            w.writerow([name, *[repr(float(v)) for v in row]])


def read_pr_csv(path: str | Path) -> dict[str, dict[str, list[float]]]:
    series: dict[str, dict[str, list[float]]] = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            s = series.setdefault(row["class"], {"recall": [], "precision": [], "envelope": []})
            for k in s:
                s[k].append(float(row[k]))
    return series


def read_confusion_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    names = rows[0][1:]
    cm = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return names, cm
