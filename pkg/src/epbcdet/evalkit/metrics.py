"""Matching, precision/recall, AP, mAP and the confusion matrix."""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from ..errors import ConfigError
from .boxes import DetectionBox, boxes_array, iou_matrix

log = logging.getLogger(__name__)

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
TN_NOT_APPLICABLE = "n/a"


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def tn(self) -> str:
        return TN_NOT_APPLICABLE

    @property
    def precision(self) -> float:
        return precision(self.tp, self.fp)

    @property
    def recall(self) -> float:
        return recall(self.tp, self.fn)


@dataclass
class MatchCounts:
    per_class: dict[int, ClassCounts] = field(default_factory=lambda: defaultdict(ClassCounts))

    def __getitem__(self, c: int) -> ClassCounts:
        return self.per_class[c]

    def merge(self, other: "MatchCounts") -> "MatchCounts":
        for c, k in other.per_class.items():
            mine = self.per_class[c]
            mine.tp += k.tp
            mine.fp += k.fp
            mine.fn += k.fn
        return self

    def total(self) -> ClassCounts:
        t = ClassCounts()
        for k in self.per_class.values():
            t.tp += k.tp
            t.fp += k.fp
            t.fn += k.fn
        return t


def precision(tp: int, fp: int) -> float:
    return tp / (tp + fp) if tp + fp else 0.0


def recall(tp: int, fn: int) -> float:
    return tp / (tp + fn) if tp + fn else 0.0


@dataclass
class MatchResult:
    counts: MatchCounts
    labels: list[bool]              # per prediction, in input order
    matched: list[int | None]       # truth index per prediction


def match(preds: Sequence[DetectionBox], truths: Sequence[DetectionBox], iou_threshold: float,
          class_agnostic: bool = False) -> MatchResult:
    """Greedy one-to-one matching by descending confidence, best IoU first."""
    n, m = len(preds), len(truths)
    counts = MatchCounts()
    labels = [False] * n
    matched: list[int | None] = [None] * n
    ious = iou_matrix(boxes_array(preds), boxes_array(truths)) if n and m else np.zeros((n, m))
    taken = np.zeros(m, dtype=bool)
    tcls = np.array([t.class_id for t in truths], dtype=np.int64)
    for i in sorted(range(n), key=lambda i: preds[i].sort_key()):
        p = preds[i]
        if m:
            ok = ~taken & (ious[i] >= iou_threshold)
            if not class_agnostic:
                ok &= tcls == p.class_id
            if ok.any():
                cand = np.where(ok, ious[i], -1.0)
                j = int(np.argmax(cand))  # first index on IoU ties
                taken[j] = True
                labels[i] = True
                matched[i] = j
        if not class_agnostic:
            if labels[i]:
                counts[p.class_id].tp += 1
            else:
                counts[p.class_id].fp += 1
    if not class_agnostic:
        for j, t in enumerate(truths):
            if not taken[j]:
                counts[t.class_id].fn += 1
            else:
                counts[t.class_id]  # register class
    return MatchResult(counts, labels, matched)


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray
    envelope: np.ndarray
    thresholds: np.ndarray
    tp: np.ndarray | None = None
    fp: np.ndarray | None = None
    n_truth: int = 0

    @property
    def ap(self) -> float:
        """Area under the envelope, evaluated in rational arithmetic from the counts."""
        if self.tp is None or self.tp.size == 0:
            return 0.0
        tp = self.tp.tolist()
        ratio = self.tp / (self.tp + self.fp)
        # index of the envelope maximiser at every point (last one on ties)
        best = np.empty(len(tp), dtype=np.int64)
        cur = len(tp) - 1
        for k in range(len(tp) - 1, -1, -1):
            if ratio[k] > ratio[cur]:
                cur = k
            best[k] = cur
        total = Fraction(0)
        prev = 0
        for k, t in enumerate(tp):
            if t > prev:
                j = int(best[k])
                total += Fraction(t - prev, self.n_truth) * Fraction(tp[j], tp[j] + int(self.fp[j]))
                prev = t
        return float(total)


def pr_curve(confidences: Sequence[float], labels: Sequence[bool], n_truth: int) -> PRCurve:
    """(recall, precision) after each distinct confidence threshold, high to low.

    Equal confidences enter the sweep together, which keeps the curve
    independent of the order of tied predictions.
    """
    conf = np.asarray(confidences, dtype=np.float64)
    lab = np.asarray(labels, dtype=bool)
    if conf.size == 0 or n_truth <= 0:
        z = np.zeros(0)
        return PRCurve(z, z, z, z)
    order = np.argsort(-conf, kind="stable")
    conf, lab = conf[order], lab[order]
    tp = np.cumsum(lab)
    fp = np.cumsum(~lab)
    last = np.r_[np.nonzero(np.diff(conf))[0], conf.size - 1]  # end of each tie group
    tp, fp = tp[last], fp[last]
    rec = tp / n_truth
    prec = tp / (tp + fp)
    env = np.maximum.accumulate(prec[::-1])[::-1]
    return PRCurve(rec, prec, env, conf[last], tp, fp, int(n_truth))


def average_precision(confidences: Sequence[float], labels: Sequence[bool], n_truth: int) -> float:
    """All-point AP: exact integral of the monotone precision envelope over recall."""
    if n_truth <= 0:
        log.info("average_precision: no ground truth, AP defined as 0")
        return 0.0
    return pr_curve(confidences, labels, n_truth).ap


@dataclass
class MetricReport:
    classes: list[int]                      # classes with ground truth, the mAP universe
    ap: dict[int, np.ndarray]               # per class, AP at each IoU threshold
    thresholds: tuple[float, ...]
    n_truth: dict[int, int]
    counts: MatchCounts                     # at IoU 0.5 and the report confidence
    conf_threshold: float
    curves: dict[int, PRCurve]              # at IoU 0.5
    micro_curve: PRCurve
    confusion_labels: list[int]             # row/column classes; background appended last
    confusion: np.ndarray                   # raw counts
    absent_classes: list[int] = field(default_factory=list)

    @property
    def map50(self) -> float:
        i = self.thresholds.index(0.5)
        return float(np.mean([self.ap[c][i] for c in self.classes])) if self.classes else 0.0

    @property
    def map5095(self) -> float:
        if not self.classes:
            return 0.0
        return float(np.mean([np.mean(self.ap[c]) for c in self.classes]))

    def map_at(self, threshold: float) -> float:
        i = self.thresholds.index(threshold)
        return float(np.mean([self.ap[c][i] for c in self.classes])) if self.classes else 0.0

    @property
    def precision(self) -> float:
        return self.counts.total().precision

    @property
    def recall(self) -> float:
        return self.counts.total().recall

    @property
    def confusion_normalized(self) -> np.ndarray:
        return normalize_rows(self.confusion)


def normalize_rows(cm: np.ndarray) -> np.ndarray:
    s = cm.sum(axis=1, keepdims=True)
    return np.divide(cm, s, out=np.zeros_like(cm, dtype=np.float64), where=s > 0)


def confusion_matrix(preds: Sequence[Sequence[DetectionBox]], truths: Sequence[Sequence[DetectionBox]],
                     labels: list[int], iou_threshold: float = 0.5) -> np.ndarray:
    """Rows actual, columns predicted; index len(labels) is background.

    Matching is class-agnostic; the matched pair's classes then pick the cell.
    """
    k = len(labels)
    pos = {c: i for i, c in enumerate(labels)}
    cm = np.zeros((k + 1, k + 1), dtype=np.float64)
    for p, t in zip(preds, truths):
        res = match(p, t, iou_threshold, class_agnostic=True)
        hit = set()
        for i, j in enumerate(res.matched):
            if j is None:
                cm[k, pos[p[i].class_id]] += 1
            else:
                hit.add(j)
                cm[pos[t[j].class_id], pos[p[i].class_id]] += 1
        for j, tb in enumerate(t):
            if j not in hit:
                cm[pos[tb.class_id], k] += 1
    return cm


def _as_image_lists(boxes) -> tuple[list, list[list[DetectionBox]]]:
    if isinstance(boxes, Mapping):
        keys = sorted(boxes)
        return keys, [list(boxes[k]) for k in keys]
    return list(range(len(boxes))), [list(b) for b in boxes]


def evaluate(preds, truths, thresholds: Sequence[float] = IOU_THRESHOLDS,
             conf_threshold: float = 0.25) -> MetricReport:
    """Full metric report. ``preds`` and ``truths`` are per-image box lists,
    either parallel sequences or mappings keyed by image id."""
    thresholds = tuple(float(t) for t in thresholds)
    if 0.5 not in thresholds:
        raise ConfigError("evaluate needs IoU 0.5 among its thresholds")
    if isinstance(preds, Mapping) or isinstance(truths, Mapping):
        keys = sorted(set(preds) | set(truths))
        preds = [list(preds.get(k, ())) for k in keys]
        truths = [list(truths.get(k, ())) for k in keys]
    else:
        _, preds = _as_image_lists(preds)
        _, truths = _as_image_lists(truths)
        if len(preds) != len(truths):
            raise ValueError(f"{len(preds)} prediction lists for {len(truths)} images")

    n_truth: dict[int, int] = defaultdict(int)
    for t in truths:
        for b in t:
            n_truth[b.class_id] += 1
    classes = sorted(n_truth)
    pred_classes = sorted({b.class_id for p in preds for b in p})
    absent = [c for c in pred_classes if c not in n_truth]
    for c in absent:
        log.info("class %d has predictions but no ground truth; AP 0, excluded from mAP", c)

    ap = {c: np.zeros(len(thresholds)) for c in classes}
    curves: dict[int, PRCurve] = {}
    micro = None
    for ti, thr in enumerate(thresholds):
        conf: dict[int, list[float]] = defaultdict(list)
        lab: dict[int, list[bool]] = defaultdict(list)
        for p, t in zip(preds, truths):
            res = match(p, t, thr)
            for b, l in zip(p, res.labels):
                conf[b.class_id].append(b.confidence)
                lab[b.class_id].append(l)
        for c in classes:
            curve = pr_curve(conf[c], lab[c], n_truth[c])
            ap[c][ti] = curve.ap
            if thr == 0.5:
                curves[c] = curve
        if thr == 0.5:
            all_conf = [x for c in classes for x in conf[c]] + [x for c in absent for x in conf[c]]
            all_lab = [x for c in classes for x in lab[c]] + [x for c in absent for x in lab[c]]
            micro = pr_curve(all_conf, all_lab, sum(n_truth.values()))

    counts = MatchCounts()
    confident = [[b for b in p if b.confidence >= conf_threshold] for p in preds]
    for p, t in zip(confident, truths):
        counts.merge(match(p, t, 0.5).counts)
    labels = sorted(set(classes) | set(pred_classes))
    cm = confusion_matrix(confident, truths, labels, 0.5)
    if micro is None:
        z = np.zeros(0)
        micro = PRCurve(z, z, z, z)
    return MetricReport(classes, ap, thresholds, dict(n_truth), counts, conf_threshold, curves, micro,
                        labels, cm, absent)
