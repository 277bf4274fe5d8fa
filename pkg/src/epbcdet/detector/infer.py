"""Turning head maps into scored, NMS-filtered boxes."""
from __future__ import annotations

import numpy as np

from ..core import functional as F
from ..core.tensor import Tensor, no_grad
from ..evalkit.boxes import DetectionBox, nms
from .model import Detector, HeadOutput

CONF_MIN = 0.001
MAX_DET = 300


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def decode(pred: HeadOutput, nms_iou: float = 0.7, conf_min: float = CONF_MIN,
           max_det: int = MAX_DET) -> list[list[DetectionBox]]:
    strides = pred.strides
    resolution = pred.box[strides[0]].shape[2] * strides[0]
    n = pred.box[strides[0]].shape[0]
    per_scale = []
    for s in strides:
        raw = pred.box[s].data
        scores = F._sigmoid(pred.cls[s].data)              # (N, C, H, W)
        h, w = raw.shape[2:]
        ys, xs = np.meshgrid((np.arange(h) + 0.5) * s, (np.arange(w) + 0.5) * s, indexing="ij")
        d = _softplus(raw) * s
        boxes = np.stack([xs - d[:, 0], ys - d[:, 1], xs + d[:, 2], ys + d[:, 3]], axis=-1)
        boxes = np.clip(boxes, 0.0, resolution)             # (N, H, W, 4)
        cls = scores.argmax(axis=1)                          # (N, H, W)
        conf = scores.max(axis=1)
        per_scale.append((boxes.reshape(n, -1, 4), cls.reshape(n, -1), conf.reshape(n, -1)))
    boxes = np.concatenate([p[0] for p in per_scale], axis=1)
    cls = np.concatenate([p[1] for p in per_scale], axis=1)
    conf = np.concatenate([p[2] for p in per_scale], axis=1)
    out = []
    for i in range(n):
        keep = np.nonzero(conf[i] >= conf_min)[0]
        keep = keep[np.argsort(-conf[i, keep], kind="stable")][:max_det]
        dets = [DetectionBox(int(cls[i, k]), float(min(conf[i, k], 1.0)), *map(float, boxes[i, k]))
                for k in keep]
        out.append(nms(dets, nms_iou))
    return out


def predict(model: Detector, images: np.ndarray, batch_size: int = 16, nms_iou: float = 0.7,
            conf_min: float = CONF_MIN, max_det: int = MAX_DET) -> list[list[DetectionBox]]:
    """Eval-mode detections for an N x 3 x R x R array."""
    was_training = model.training
    model.eval()
    out: list[list[DetectionBox]] = []
    try:
        with no_grad():
            for start in range(0, len(images), batch_size):
                pred = model(Tensor(np.ascontiguousarray(images[start:start + batch_size])))
                out.extend(decode(pred, nms_iou, conf_min, max_det))
    finally:
        model.train(was_training)
    return out
