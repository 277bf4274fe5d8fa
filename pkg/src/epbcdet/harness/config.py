"""Run configuration: one JSON document plus ``key=value`` overrides."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

from ..detector.model import ModelConfig
from ..detector.train import TrainConfig
from ..errors import ConfigError, InputError


@dataclass(frozen=True)
class SynthSpec:
    """Synthetic data generated into the run directory when no dataset is given."""

    seed: int = 0
    n_train: int = 200
    n_val: int = 50
    resolution: int = 96
    classes: int = 5


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: str | None = None        # root holding train/ and val/ splits
    synth: SynthSpec = field(default_factory=SynthSpec)
    out_dir: str = "runs"
    name: str = "exp"
    validate_every: int = 1

    @property
    def seed(self) -> int:
        return self.train.seed

    @property
    def run_dir(self) -> Path:
        return Path(self.out_dir) / self.name

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": self.data,
            "synth": asdict(self.synth),
            "out_dir": self.out_dir,
            "name": self.name,
            "validate_every": self.validate_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run config keys: {sorted(unknown)}")
        kw: dict[str, Any] = {k: v for k, v in d.items() if k not in ("model", "train", "synth")}
        if "model" in d:
            kw["model"] = ModelConfig.from_dict(d["model"])
        if "train" in d:
            kw["train"] = TrainConfig.from_dict(d["train"])
        if "synth" in d:
            extra = set(d["synth"]) - {f.name for f in fields(SynthSpec)}
            if extra:
                raise ConfigError(f"unknown synth keys: {sorted(extra)}")
            kw["synth"] = SynthSpec(**d["synth"])
        if kw.get("validate_every", 1) < 1:
            raise ConfigError("validate_every must be >= 1")
        return cls(**kw)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def load_config(path: str | Path | None, overrides: Sequence[str] = ()) -> RunConfig:
    d: dict = {}
    if path is not None:
        try:
            d = json.loads(Path(path).read_text())
        except OSError as e:
            raise InputError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from e
    return RunConfig.from_dict(apply_overrides(RunConfig.from_dict(d).to_dict(), overrides))


def apply_overrides(d: dict, overrides: Sequence[str]) -> dict:
    """``train.epochs=5`` style assignments; values parse as JSON when they can."""
    d = json.loads(json.dumps(d))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.strip().split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"override {key!r}: {p!r} is not a section")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"override {key!r}: unknown key")
        node[parts[-1]] = value
    return d
