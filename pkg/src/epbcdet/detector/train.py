"""SGD training loop with per-epoch validation metrics."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..core.params import ParamSet
from ..core.tensor import Tensor
from ..errors import ConfigError, InputError, NonFiniteError
from ..evalkit.boxes import DetectionBox
from ..evalkit.metrics import MetricReport, evaluate
from .infer import CONF_MIN, predict
from .loss import compute_loss
from .model import Detector

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "box_loss", "cls_loss", "precision", "recall", "map50", "map5095")


@dataclass
class Sample:
    image: np.ndarray                 # 3 x R x R, values in [0, 1]
    boxes: list[DetectionBox]         # pixel corners in the R x R frame
    image_id: str = ""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-2
    final_lr: float = 1e-2
    momentum: float = 0.9
    schedule: str = "constant"
    nms_iou: float = 0.7
    conf_report: float = 0.25
    conf_min: float = CONF_MIN
    box_gain: float = 1.0
    cls_gain: float = 1.0
    flip: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.lr < 0 or self.final_lr < 0:
            raise ConfigError("learning rates must be non-negative")
        if not 0.0 < self.nms_iou <= 1.0:
            raise ConfigError("nms_iou must lie in (0, 1]")

    def lr_at(self, epoch: int) -> float:
        """Rate for a 0-based epoch."""
        if self.schedule == "constant" or self.epochs <= 1:
            return self.lr
        t = epoch / (self.epochs - 1)
        return self.final_lr + 0.5 * (self.lr - self.final_lr) * (1 + math.cos(math.pi * t))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


class SGD:
    """v <- momentum * v + g;  p <- p - lr * v."""

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9) -> None:
        self.params = list(params)
        self.lr, self.momentum = lr, momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data -= self.lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class EpochRecord:
    epoch: int
    box_loss: float
    cls_loss: float
    precision: float
    recall: float
    map50: float
    map5095: float

    def row(self) -> list[str]:
        return [str(self.epoch)] + [repr(float(getattr(self, c))) for c in HISTORY_COLUMNS[1:]]


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    report: MetricReport | None = None
    steps: int = 0


def stack_batch(samples: Sequence[Sample], flip_mask: np.ndarray | None = None
                ) -> tuple[np.ndarray, list[list[DetectionBox]]]:
    images = np.stack([s.image for s in samples])
    targets = [list(s.boxes) for s in samples]
    if flip_mask is not None and flip_mask.any():
        r = images.shape[-1]
        for i in np.nonzero(flip_mask)[0]:
            images[i] = images[i, :, :, ::-1]
            targets[i] = [DetectionBox(b.class_id, b.confidence, r - b.x2, b.y1, r - b.x1, b.y2)
                          for b in targets[i]]
    return np.ascontiguousarray(images), targets


def validate(model: Detector, samples: Sequence[Sample], cfg: TrainConfig, batch_size: int | None = None
             ) -> tuple[MetricReport, list[list[DetectionBox]]]:
    images = np.stack([s.image for s in samples]) if samples else np.zeros((0, 3, 1, 1))
    preds = predict(model, images, batch_size or cfg.batch_size, cfg.nms_iou, cfg.conf_min)
    report = evaluate(preds, [s.boxes for s in samples], conf_threshold=cfg.conf_report)
    return report, preds


def write_history(path: str | Path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(HISTORY_COLUMNS)
        for rec in history:
            w.writerow(rec.row())


def read_history(path: str | Path) -> list[EpochRecord]:
    with open(path, newline="") as f:
        return [EpochRecord(int(r["epoch"]), *(float(r[c]) for c in HISTORY_COLUMNS[1:]))
                for r in csv.DictReader(f)]


def train(model: Detector, dataset: Sequence[Sample], cfg: TrainConfig,
          val: Sequence[Sample] | None = None, out_dir: str | Path | None = None,
          validate_every: int = 1, on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Train in place. ``val`` defaults to the training set itself."""
    if not dataset:
        raise InputError("training dataset is empty")
    val = dataset if val is None else val
    rng = np.random.default_rng(cfg.seed)
    params = ParamSet.from_module(model)
    opt = SGD([t for _, t in params.trainable()], cfg.lr, cfg.momentum)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    result = TrainResult()
    n = len(dataset)
    for epoch in range(cfg.epochs):
        model.train()
        opt.lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        box_sum = cls_sum = 0.0
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            flips = rng.random(idx.size) < 0.5 if cfg.flip else None
            x, targets = stack_batch([dataset[i] for i in idx], flips)
            opt.zero_grad()
            try:
                terms = compute_loss(model(Tensor(x)), targets, cfg.box_gain, cfg.cls_gain)
            except NonFiniteError as e:
                raise NonFiniteError(f"epoch {epoch + 1}, step {result.steps + 1}: {e}") from e
            terms.total.backward()
            opt.step()
            b, c, _ = terms.values()
            box_sum += b
            cls_sum += c
            batches += 1
            result.steps += 1
        if (epoch + 1) % validate_every == 0 or epoch + 1 == cfg.epochs:
            report, _ = validate(model, val, cfg)
            result.report = report
            p, r, m50, m5095 = report.precision, report.recall, report.map50, report.map5095
        else:
            p = r = m50 = m5095 = float("nan")
        rec = EpochRecord(epoch + 1, box_sum / batches, cls_sum / batches, p, r, m50, m5095)
        result.history.append(rec)
        log.info("epoch %d box %.4f cls %.4f P %.3f R %.3f mAP50 %.3f mAP50-95 %.3f",
                 rec.epoch, rec.box_loss, rec.cls_loss, p, r, m50, m5095)
        if on_epoch is not None:
            on_epoch(rec)
        if out_dir is not None:
            write_history(out_dir / "history.csv", result.history)
    if out_dir is not None:
        params.save(out_dir / "checkpoint.bin")
    return result
