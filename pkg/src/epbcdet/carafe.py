"""CARAFE content-aware upsampling.

A compressor (1x1) and content encoder (k_enc x k_enc) predict
sigma^2 * k_up^2 logits per source pixel; pixel shuffle spreads them to the
output grid and a softmax over the k_up^2 taps normalises each kernel. The
output at (i', j') is that kernel applied to the k_up x k_up neighbourhood of
source pixel (i' // sigma, j' // sigma), shared across channels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import functional as F
from .core.nn import Conv2d, Module
from .core.tensor import Tensor
from .errors import ConfigError


@dataclass(frozen=True)
class CarafeConfig:
    upscale: int = 2
    k_up: int = 5
    k_enc: int = 3
    compressed: int = 64

    def __post_init__(self) -> None:
        if self.upscale < 1:
            raise ConfigError(f"CARAFE upscale must be >= 1, got {self.upscale}")
        if self.k_up < 1 or self.k_up % 2 == 0:
            raise ConfigError(f"CARAFE k_up must be odd, got {self.k_up}")
        if self.k_enc < 1 or self.k_enc % 2 == 0:
            raise ConfigError(f"CARAFE k_enc must be odd, got {self.k_enc}")
        if self.compressed < 1:
            raise ConfigError("CARAFE compressed channels must be positive")

    @property
    def encoder_channels(self) -> int:
        return self.upscale ** 2 * self.k_up ** 2

    def compressed_for(self, channels: int) -> int:
        return min(self.compressed, channels)


class CARAFE(Module):
    def __init__(self, channels: int, cfg: CarafeConfig = CarafeConfig(),
                 rng: np.random.Generator | None = None) -> None:
        super().__init__()
        self.channels, self.cfg = channels, cfg
        cm = cfg.compressed_for(channels)
        self.compressor = Conv2d(channels, cm, 1, bias=False, rng=rng)
        self.encoder = Conv2d(cm, cfg.encoder_channels, cfg.k_enc, pad=cfg.k_enc // 2, bias=False, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return carafe_forward(x, self, self.cfg)

    def describe(self) -> str:
        c = self.cfg
        return f"CARAFE(C={self.channels}, s={c.upscale}, k_up={c.k_up}, k_enc={c.k_enc})"


def predict_kernels(x: Tensor, p: CARAFE, cfg: CarafeConfig, encoder_bias: Tensor | None = None) -> Tensor:
    """Per-output-position reassembly kernels, N x k_up^2 x sH x sW."""
    logits = F.conv2d(p.compressor(x), p.encoder.weight, encoder_bias, 1, cfg.k_enc // 2)
    if logits.shape[1] != cfg.encoder_channels:
        raise ConfigError(f"encoder emits {logits.shape[1]} channels, expected "
                          f"{cfg.upscale}^2 * {cfg.k_up}^2 = {cfg.encoder_channels}")
    return F.softmax(F.pixel_shuffle(logits, cfg.upscale), axis=1)


def reassemble(x: Tensor, kernels: Tensor, cfg: CarafeConfig) -> Tensor:
    return F.carafe_reassemble(x, kernels, cfg.k_up, cfg.upscale)


def carafe_forward(x: Tensor, p: CARAFE, cfg: CarafeConfig) -> Tensor:
    return reassemble(x, predict_kernels(x, p, cfg), cfg)


def carafe_param_count(channels: int, cfg: CarafeConfig) -> int:
    cm = cfg.compressed_for(channels)
    return channels * cm + cm * cfg.encoder_channels * cfg.k_enc ** 2
