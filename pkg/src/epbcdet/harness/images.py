"""Image containers and letterbox preprocessing.

Binary PPM (P6) is read and written natively; PNG goes through Pillow when it
is installed.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import InputError
from ..evalkit.boxes import DetectionBox

PAD_VALUE = 114 / 255


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """``image``: H x W x 3 uint8."""
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InputError(f"PPM needs an H x W x 3 array, got {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def _ppm_header(data: bytes, path) -> tuple[int, int, int, int]:
    """(width, height, maxval, payload offset)."""
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InputError(f"{path}: truncated PPM header")
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise InputError(f"{path}: not a binary PPM (magic {fields[0]!r})")
    try:
        w, h, maxval = (int(v) for v in fields[1:])
    except ValueError as e:
        raise InputError(f"{path}: bad PPM header") from e
    return w, h, maxval, pos + 1


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, maxval, off = _ppm_header(data, path)
    if maxval != 255:
        raise InputError(f"{path}: only 8-bit PPM is supported (maxval {maxval})")
    payload = data[off:off + w * h * 3]
    if len(payload) != w * h * 3:
        raise InputError(f"{path}: PPM payload truncated")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()


def image_size(path: str | Path) -> tuple[int, int]:
    """(width, height) without decoding the payload."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        with open(path, "rb") as f:
            head = f.read(256)
        w, h, _, _ = _ppm_header(head, path)
        return w, h
    img = read_image(path)
    return img.shape[1], img.shape[0]


def read_image(path: str | Path) -> np.ndarray:
    """H x W x 3 uint8."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ppm":
        return read_ppm(path)
    if suffix == ".png":
        try:
            from PIL import Image
        except ImportError as e:  # pragma: no cover - depends on the environment
            raise InputError(f"{path}: PNG support needs Pillow (pip install epbcdet[png])") from e
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    raise InputError(f"{path}: unsupported image format {suffix!r}")


@dataclass(frozen=True)
class Affine:
    """Letterbox mapping: x' = x * scale + pad_x, y' = y * scale + pad_y."""

    scale: float
    pad_x: int
    pad_y: int

    def forward(self, box: DetectionBox) -> DetectionBox:
        s = self.scale
        return DetectionBox(box.class_id, box.confidence, box.x1 * s + self.pad_x, box.y1 * s + self.pad_y,
                            box.x2 * s + self.pad_x, box.y2 * s + self.pad_y)

    def inverse(self, box: DetectionBox) -> DetectionBox:
        s = self.scale
        return DetectionBox(box.class_id, box.confidence, (box.x1 - self.pad_x) / s,
                            (box.y1 - self.pad_y) / s, (box.x2 - self.pad_x) / s, (box.y2 - self.pad_y) / s)


def letterbox(image: np.ndarray, side: int) -> tuple[np.ndarray, Affine]:
    """Aspect-preserving nearest resize onto a gray ``side`` x ``side`` canvas.

    Returns a 3 x side x side float array in [0, 1] and the affine record.
    """
    if side < 2:
        raise InputError(f"letterbox side must be >= 2, got {side}")
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[0] == 0 or img.shape[1] == 0:
        raise InputError(f"letterbox needs a non-empty H x W x 3 image, got {img.shape}")
    h, w = img.shape[:2]
    scale = side / max(w, h)
    nw, nh = min(side, max(1, round(w * scale))), min(side, max(1, round(h * scale)))
    xs = np.minimum((np.floor((np.arange(nw) + 0.5) / scale)).astype(np.int64), w - 1)
    ys = np.minimum((np.floor((np.arange(nh) + 0.5) / scale)).astype(np.int64), h - 1)
    resized = img[ys[:, None], xs[None, :]]
    if resized.dtype == np.uint8:
        resized = resized.astype(np.float64) / 255.0
    pad_x, pad_y = (side - nw) // 2, (side - nh) // 2
    canvas = np.full((side, side, 3), PAD_VALUE)
    canvas[pad_y:pad_y + nh, pad_x:pad_x + nw] = resized
    return np.ascontiguousarray(canvas.transpose(2, 0, 1)), Affine(scale, pad_x, pad_y)
