"""Named parameter trees and the checkpoint container.

Checkpoint layout: an ASCII manifest, one line per entry
``<name> <extents> <byte offset>``, terminated by ``end``, followed by the
concatenated little-endian float64 payload. Offsets are relative to the
first payload byte.
"""
from __future__ import annotations

import os
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from ..errors import ContractError, InputError, ShapeError
from .tensor import Tensor

MAGIC = "EPBC-CHECKPOINT 1"


@dataclass
class ParamEntry:
    tensor: Tensor
    trainable: bool

    @property
    def value(self) -> np.ndarray:
        return self.tensor.data

    @property
    def grad(self) -> np.ndarray:
        g = self.tensor.grad
        return np.zeros_like(self.tensor.data) if g is None else g


class ParamSet:
    """Ordered ``dotted.name -> (tensor, grad, trainable)`` map."""

    def __init__(self, entries: "OrderedDict[str, ParamEntry] | None" = None) -> None:
        self._entries: OrderedDict[str, ParamEntry] = entries or OrderedDict()

    @classmethod
    def from_module(cls, module) -> "ParamSet":
        entries: OrderedDict[str, ParamEntry] = OrderedDict()
        for name, t in module.named_tensors():
            if name in entries:
                raise ContractError(f"duplicate parameter name {name!r}")
            entries[name] = ParamEntry(t, t.requires_grad)
        return cls(entries)

    def __getitem__(self, name: str) -> ParamEntry:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, e.tensor) for n, e in self._entries.items() if e.trainable]

    def count(self, trainable_only: bool = True) -> int:
        return int(sum(e.tensor.size for e in self._entries.values() if e.trainable or not trainable_only))

    def zero_grad(self) -> None:
        for e in self._entries.values():
            e.tensor.grad = None

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, e.tensor.data.copy()) for n, e in self._entries.items())

    def assign(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        if strict:
            missing = set(self._entries) - set(arrays)
            extra = set(arrays) - set(self._entries)
            if missing or extra:
                raise InputError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in arrays.items():
            if name not in self._entries:
                continue
            t = self._entries[name].tensor
            if t.shape != arr.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != model shape {t.shape}")
            t.data[...] = arr

    def save(self, path: str | os.PathLike) -> None:
        save_checkpoint(path, self.arrays())

    def load(self, path: str | os.PathLike, strict: bool = True) -> None:
        self.assign(load_checkpoint(path), strict=strict)


def save_checkpoint(path: str | os.PathLike, arrays: dict[str, np.ndarray]) -> None:
    lines = [MAGIC]
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        if any(ch.isspace() for ch in name):
            raise InputError(f"parameter name {name!r} contains whitespace")
        extents = ",".join(str(d) for d in arr.shape) or "scalar"
        lines.append(f"{name} {extents} {offset}")
        blob = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        blobs.append(blob)
        offset += len(blob)
    lines.append("end")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("ascii"))
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | os.PathLike) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        raw = fh.read()
    header_end = raw.find(b"\nend\n")
    if not raw.startswith(MAGIC.encode()) or header_end < 0:
        raise InputError(f"{path}: not an EPBC checkpoint")
    payload = memoryview(raw)[header_end + 5:]
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for line in raw[:header_end].decode("ascii").splitlines()[1:]:
        name, extents, offset = line.split(" ")
        shape = () if extents == "scalar" else tuple(int(d) for d in extents.split(","))
        count = int(np.prod(shape)) if shape else 1
        start = int(offset)
        arr = np.frombuffer(payload[start:start + 8 * count], dtype="<f8")
        if arr.size != count:
            raise InputError(f"{path}: truncated payload for {name}")
        out[name] = arr.astype(np.float64).reshape(shape)
    return out
