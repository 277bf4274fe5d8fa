"""Datasets in the normalized ``class cx cy w h`` label layout, plus a synthetic generator.

A dataset root holds ``images/`` and ``labels/`` with matching stems and an
optional ``classes.txt`` (one name per line).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..detector.train import Sample
from ..errors import ConfigError, InputError
from ..evalkit.boxes import DetectionBox, iou
from .images import Affine, image_size, letterbox, read_image, write_ppm

IMAGE_SUFFIXES = (".ppm", ".png")
CLASS_NAMES = ("disc", "square", "triangle", "ring", "cross")
MAX_PAIR_IOU = 0.3
PLACEMENT_RETRIES = 200


@dataclass
class DatasetItem:
    image_id: str
    image_path: Path
    label_path: Path | None
    width: int
    height: int
    boxes: list[DetectionBox]


@dataclass
class DatasetManifest:
    split: str
    items: list[DatasetItem] = field(default_factory=list)
    class_names: list[str] = field(default_factory=list)
    decoder: str = "ppm"

    def __len__(self) -> int:
        return len(self.items)


def parse_label_file(path: Path, width: int, height: int) -> list[DetectionBox]:
    boxes = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 5:
            raise InputError(f"{path}:{lineno}: expected 'class cx cy w h', got {line!r}")
        try:
            cls = int(parts[0])
            cx, cy, bw, bh = (float(v) for v in parts[1:])
        except ValueError as e:
            raise InputError(f"{path}:{lineno}: unparsable label {line!r}") from e
        for name, v in (("cx", cx), ("cy", cy), ("w", bw), ("h", bh)):
            if not 0.0 <= v <= 1.0:
                raise InputError(f"{path}:{lineno}: {name} = {v} outside [0, 1]")
        if cls < 0:
            raise InputError(f"{path}:{lineno}: negative class id {cls}")
        boxes.append(DetectionBox.truth(cls, (cx - bw / 2) * width, (cy - bh / 2) * height,
                                        (cx + bw / 2) * width, (cy + bh / 2) * height))
    return boxes


def load_dataset(root: str | Path, split: str | None = None) -> DatasetManifest:
    root = Path(root)
    img_dir, lab_dir = root / "images", root / "labels"
    if not img_dir.is_dir():
        raise InputError(f"{root}: no images/ directory")
    names_file = root / "classes.txt"
    names = names_file.read_text().split() if names_file.exists() else []
    items = []
    kinds = set()
    for p in sorted(img_dir.iterdir()):
        if p.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        kinds.add(p.suffix.lower().lstrip("."))
        w, h = image_size(p)
        lab = lab_dir / f"{p.stem}.txt"
        boxes = parse_label_file(lab, w, h) if lab.exists() else []
        items.append(DatasetItem(p.stem, p, lab if lab.exists() else None, w, h, boxes))
    decoder = "+".join(sorted(kinds)) or "ppm"
    return DatasetManifest(split or root.name, items, names, decoder)


def to_samples(manifest: DatasetManifest, resolution: int) -> tuple[list[Sample], list[Affine]]:
    """Letterboxed samples with boxes mapped into the model frame."""
    samples, affines = [], []
    for it in manifest.items:
        img, aff = letterbox(read_image(it.image_path), resolution)
        boxes = [_clip(aff.forward(b), resolution) for b in it.boxes]
        samples.append(Sample(img, boxes, it.image_id))
        affines.append(aff)
    return samples, affines


def _clip(b: DetectionBox, r: int) -> DetectionBox:
    c = lambda v: min(max(v, 0.0), float(r))  # noqa: E731
    return DetectionBox(b.class_id, b.confidence, c(b.x1), c(b.y1), c(b.x2), c(b.y2))


# ----- synthetic blobs --------------------------------------------------------------------

# per-class RGB signature; shapes differ too so either cue suffices
CLASS_COLORS = np.array([
    [220, 50, 40],
    [40, 190, 60],
    [50, 80, 230],
    [235, 200, 30],
    [200, 60, 210],
], dtype=np.float64)


def _shape_mask(cls: int, w: int, h: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    u = (xx + 0.5) / w * 2 - 1
    v = (yy + 0.5) / h * 2 - 1
    r2 = u * u + v * v
    if cls == 0:
        return r2 <= 1.0
    if cls == 1:
        return np.ones((h, w), dtype=bool)
    if cls == 2:
        return np.abs(u) <= (v + 1) / 2
    if cls == 3:
        return (r2 <= 1.0) & (r2 >= 0.3)
    return (np.abs(u) <= 0.34) | (np.abs(v) <= 0.34)


def _background(rng: np.random.Generator, side: int) -> np.ndarray:
    coarse = rng.uniform(70, 150, size=(side // 8 + 2, side // 8 + 2, 1))
    idx = np.arange(side) // 8
    smooth = coarse[idx[:, None], idx[None, :]]
    tint = rng.uniform(-12, 12, size=(1, 1, 3))
    grain = rng.normal(0.0, 10.0, size=(side, side, 3))
    return smooth + tint + grain


def _render(rng: np.random.Generator, side: int, n_classes: int, min_size: int, max_size: int
            ) -> tuple[np.ndarray, list[DetectionBox]]:
    img = _background(rng, side)
    n_blobs = int(rng.integers(1, 5))
    placed: list[DetectionBox] = []
    for _ in range(n_blobs):
        cls = int(rng.integers(0, n_classes))
        for _attempt in range(PLACEMENT_RETRIES):
            w = int(rng.integers(min_size, max_size + 1))
            h = int(np.clip(round(w * rng.uniform(0.75, 1.33)), min_size, max_size))
            x1 = int(rng.integers(0, side - w + 1))
            y1 = int(rng.integers(0, side - h + 1))
            box = DetectionBox.truth(cls, x1, y1, x1 + w, y1 + h)
            if all(iou(box, b) <= MAX_PAIR_IOU for b in placed):
                break
        else:
            raise ConfigError(f"could not place blob {len(placed) + 1} with pairwise IoU <= {MAX_PAIR_IOU} "
                              f"after {PLACEMENT_RETRIES} attempts")
        mask = _shape_mask(cls, w, h)
        color = CLASS_COLORS[cls] + rng.uniform(-15, 15, size=3)
        patch = img[y1:y1 + h, x1:x1 + w]
        shade = color + rng.normal(0.0, 6.0, size=patch.shape)
        patch[mask] = shade[mask]
        placed.append(box)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8), placed


def synth_dataset(root: str | Path, seed: int, n: int, resolution: int = 96, classes: int = 5,
                  split: str = "train", min_size: int | None = None, max_size: int | None = None
                  ) -> DatasetManifest:
    """Write ``n`` blob images under ``root`` and return the manifest."""
    if not 1 <= classes <= len(CLASS_NAMES):
        raise ConfigError(f"classes must be in 1..{len(CLASS_NAMES)}, got {classes}")
    if n < 0:
        raise ConfigError("n must be non-negative")
    min_size = min_size or max(4, resolution // 8)
    max_size = max_size or max(min_size, round(resolution * 0.4))
    if max_size > resolution:
        raise ConfigError("blob size exceeds the image")
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    (root / "classes.txt").write_text("\n".join(CLASS_NAMES[:classes]) + "\n")
    rng = np.random.default_rng(seed)
    digits = max(4, len(str(max(n - 1, 0))))
    items = []
    for i in range(n):
        img, boxes = _render(rng, resolution, classes, min_size, max_size)
        stem = f"{split}_{i:0{digits}d}"
        ip, lp = root / "images" / f"{stem}.ppm", root / "labels" / f"{stem}.txt"
        write_ppm(ip, img)
        lines = []
        for b in boxes:
            cx, cy = (b.x1 + b.x2) / 2 / resolution, (b.y1 + b.y2) / 2 / resolution
            bw, bh = (b.x2 - b.x1) / resolution, (b.y2 - b.y1) / resolution
            lines.append(f"{b.class_id} {cx!r} {cy!r} {bw!r} {bh!r}")
        lp.write_text("\n".join(lines) + "\n")
        items.append(DatasetItem(stem, ip, lp, resolution, resolution, boxes))
    return DatasetManifest(split, items, list(CLASS_NAMES[:classes]), "ppm")


def synth_splits(root: str | Path, seed: int, n_train: int, n_val: int, resolution: int = 96,
                 classes: int = 5) -> dict[str, DatasetManifest]:
    """Train and val splits under ``root/train`` and ``root/val`` from derived seeds."""
    root = Path(root)
    seeds = np.random.SeedSequence(seed).spawn(2)
    return {
        "train": synth_dataset(root / "train", int(seeds[0].generate_state(1)[0]), n_train, resolution,
                               classes, "train"),
        "val": synth_dataset(root / "val", int(seeds[1].generate_state(1)[0]), n_val, resolution,
                             classes, "val"),
    }


def dataset_checksum(root: str | Path) -> str:
    """SHA-256 over sorted file names and bytes, for determinism checks."""
    h = hashlib.sha256()
    root = Path(root)
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()

