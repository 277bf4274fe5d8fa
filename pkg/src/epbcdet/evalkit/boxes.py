"""Boxes, IoU and class-aware NMS."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import kernels
from ..errors import ConfigError, InputError


@dataclass(frozen=True)
class DetectionBox:
    """Corner-form box in pixels. Ground truths carry confidence 1."""

    class_id: int
    confidence: float
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in coords):
            raise InputError(f"non-finite box coordinates {coords}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise InputError(f"box corners out of order: {coords}")
        if not 0.0 <= self.confidence <= 1.0:
            raise InputError(f"confidence {self.confidence} outside [0, 1]")
        if self.class_id < 0:
            raise InputError(f"negative class id {self.class_id}")

    @classmethod
    def truth(cls, class_id: int, x1: float, y1: float, x2: float, y2: float) -> "DetectionBox":
        return cls(int(class_id), 1.0, float(x1), float(y1), float(x2), float(y2))

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    @property
    def corners(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def sort_key(self) -> tuple:
        # content-based order for equal confidences, so results don't depend on list order
        return (-self.confidence, self.class_id, self.x1, self.y1, self.x2, self.y2)


def iou(a: DetectionBox, b: DetectionBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def boxes_array(boxes: Sequence[DetectionBox]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4))
    return np.array([b.corners for b in boxes], dtype=np.float64)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between corner arrays of shape (n, 4) and (m, 4)."""
    a = a.reshape(-1, 4)
    b = b.reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def nms(boxes: Sequence[DetectionBox], iou_threshold: float) -> list[DetectionBox]:
    """Per-class greedy suppression; output by descending confidence, ties by input index."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ConfigError(f"NMS threshold must lie in (0, 1], got {iou_threshold}")
    if not boxes:
        return []
    conf = np.array([b.confidence for b in boxes])
    order = np.argsort(-conf, kind="stable")
    ordered = [boxes[i] for i in order]
    keep = kernels.nms_keep(boxes_array(ordered), np.array([b.class_id for b in ordered]), iou_threshold)
    return [b for b, k in zip(ordered, keep) if k]
