"""Center-cell assignment, IoU box loss and one-vs-all BCE class loss."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import functional as F
from ..core.tensor import Tensor
from ..errors import InputError, NonFiniteError
from ..evalkit.boxes import DetectionBox
from .model import HeadOutput

# a target goes to the scale whose stride best matches max_side / SIZE_RATIO
SIZE_RATIO = 2.0
BOUNDS_TOL = 1e-9


@dataclass
class Assignment:
    """Assigned cells at one stride, as parallel arrays."""

    image: np.ndarray
    row: np.ndarray
    col: np.ndarray
    cls: np.ndarray
    boxes: np.ndarray  # (K, 4) corner form, pixels

    def __len__(self) -> int:
        return int(self.image.size)


@dataclass
class LossTerms:
    box: Tensor
    cls: Tensor
    total: Tensor
    n_targets: int

    def values(self) -> tuple[float, float, float]:
        return float(self.box.data), float(self.cls.data), float(self.total.data)


def best_stride(box: DetectionBox, strides: Sequence[int]) -> int:
    side = max(box.x2 - box.x1, box.y2 - box.y1, 1e-12)
    return min(strides, key=lambda s: (abs(math.log2(side / (SIZE_RATIO * s))), s))


def check_targets(targets: Sequence[Sequence[DetectionBox]], resolution: int) -> None:
    for i, boxes in enumerate(targets):
        for b in boxes:
            if (b.x1 < -BOUNDS_TOL or b.y1 < -BOUNDS_TOL or b.x2 > resolution + BOUNDS_TOL
                    or b.y2 > resolution + BOUNDS_TOL):
                raise InputError(f"image {i}: target {b.corners} lies outside the "
                                 f"{resolution}x{resolution} input")


def assign(targets: Sequence[Sequence[DetectionBox]], resolution: int,
           strides: Sequence[int] = (8, 16, 32)) -> dict[int, Assignment]:
    """Each target claims the cell holding its center at its best-matching stride.

    When two targets claim one cell, the smaller box wins.
    """
    check_targets(targets, resolution)
    cells: dict[int, dict[tuple[int, int, int], DetectionBox]] = {s: {} for s in strides}
    for i, boxes in enumerate(targets):
        for b in boxes:
            s = best_stride(b, strides)
            g = resolution // s
            cx, cy = 0.5 * (b.x1 + b.x2), 0.5 * (b.y1 + b.y2)
            key = (i, min(int(cy // s), g - 1), min(int(cx // s), g - 1))
            prev = cells[s].get(key)
            if prev is None or b.area < prev.area:
                cells[s][key] = b
    out = {}
    for s in strides:
        items = sorted(cells[s].items(), key=lambda kv: kv[0])
        out[s] = Assignment(
            image=np.array([k[0] for k, _ in items], dtype=np.int64),
            row=np.array([k[1] for k, _ in items], dtype=np.int64),
            col=np.array([k[2] for k, _ in items], dtype=np.int64),
            cls=np.array([b.class_id for _, b in items], dtype=np.int64),
            boxes=np.array([b.corners for _, b in items], dtype=np.float64).reshape(-1, 4))
    return out


def decode_distances(raw: Tensor, stride: int) -> Tensor:
    """Raw head outputs -> non-negative side distances in pixels."""
    return F.softplus(raw) * float(stride)


def box_iou_terms(raw: Tensor, a: Assignment, stride: int) -> Tensor:
    """IoU between decoded predictions at assigned cells and their targets, shape (K,)."""
    d = decode_distances(raw, stride)
    ax = (a.col + 0.5) * stride
    ay = (a.row + 0.5) * stride
    px1, py1 = F.sub(ax, d[:, 0]), F.sub(ay, d[:, 1])
    px2, py2 = d[:, 2] + ax, d[:, 3] + ay
    t = a.boxes
    iw = F.relu(F.sub(F.minimum(px2, t[:, 2]), F.maximum(px1, t[:, 0])))
    ih = F.relu(F.sub(F.minimum(py2, t[:, 3]), F.maximum(py1, t[:, 1])))
    inter = iw * ih
    parea = (px2 - px1) * (py2 - py1)
    tarea = (t[:, 2] - t[:, 0]) * (t[:, 3] - t[:, 1])
    return inter / (parea + tarea - inter)


def compute_loss(pred: HeadOutput, targets: Sequence[Sequence[DetectionBox]],
                 box_gain: float = 1.0, cls_gain: float = 1.0) -> LossTerms:
    strides = pred.strides
    s0 = strides[0]
    resolution = pred.box[s0].shape[2] * s0
    n_images = pred.box[s0].shape[0]
    if len(targets) != n_images:
        raise InputError(f"{len(targets)} target lists for a batch of {n_images}")
    assigned = assign(targets, resolution, strides)
    n_pos = sum(len(a) for a in assigned.values())

    ious = []
    cls_total = None
    for s in strides:
        a = assigned[s]
        logits = pred.cls[s]
        y = np.zeros(logits.shape)
        if len(a):
            y[a.image, a.cls, a.row, a.col] = 1.0
            raw = pred.box[s][a.image, :, a.row, a.col]  # (K, 4)
            ious.append(box_iou_terms(raw, a, s))
        term = F.sum(F.bce_with_logits(logits, y))
        cls_total = term if cls_total is None else cls_total + term
    cls_loss = cls_total * (1.0 / max(n_pos, 1))
    if ious:
        box_loss = F.mean(F.sub(1.0, F.concat(ious, axis=0)))
    else:
        box_loss = Tensor(np.array(0.0))
    total = box_loss * box_gain + cls_loss * cls_gain
    if not np.isfinite(total.data):
        raise NonFiniteError(f"non-finite loss: box={float(box_loss.data)} cls={float(cls_loss.data)}")
    return LossTerms(box_loss, cls_loss, total, n_pos)
