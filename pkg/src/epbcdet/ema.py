"""Efficient multi-scale attention (EMA) and its C2f integration.

Channels are split into G groups that share one set of weights. Within a
group, a 1x1 path gates the features with row and column descriptors, a
k x k path (5x5 by default) captures local context, and each path's pooled
channel descriptor attends over the other path's spatial map. The two maps
are summed and squashed into a per-position sigmoid gate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import functional as F
from .core.nn import Conv2d, ConvModule, GroupNorm, Module, ModuleList
from .core.tensor import Tensor
from .errors import ConfigError
from .fasterpw import FasterPWBlock


def default_groups(channels: int) -> int:
    if channels >= 8 and channels % 8 == 0:
        return 8
    return max(g for g in range(1, min(channels, 8) + 1) if channels % g == 0)


@dataclass(frozen=True)
class EmaConfig:
    channels: int
    groups: int | None = None
    large_branch_kernel: int = 5

    def __post_init__(self) -> None:
        if self.groups is None:
            object.__setattr__(self, "groups", default_groups(self.channels))
        if self.channels < 1 or self.groups < 1 or self.channels % self.groups:
            raise ConfigError(f"EMA: {self.channels} channels not divisible into {self.groups} groups")
        if self.large_branch_kernel not in (3, 5):
            raise ConfigError(f"EMA: large_branch_kernel must be 3 or 5, got {self.large_branch_kernel}")

    @property
    def group_channels(self) -> int:
        return self.channels // self.groups


class EMA(Module):
    def __init__(self, cfg: EmaConfig, rng: np.random.Generator | None = None) -> None:
        super().__init__()
        self.cfg = cfg
        cg, k = cfg.group_channels, cfg.large_branch_kernel
        self.conv1x1 = Conv2d(cg, cg, 1, rng=rng)
        self.convk = Conv2d(cg, cg, k, pad=k // 2, rng=rng)
        self.gn = GroupNorm(1, cg)

    def forward(self, x: Tensor) -> Tensor:
        return ema_forward(x, self, self.cfg)

    def describe(self) -> str:
        return f"EMA(C={self.cfg.channels}, G={self.cfg.groups}, k={self.cfg.large_branch_kernel})"


def ema_forward(x: Tensor, p: EMA, cfg: EmaConfig) -> Tensor:
    n, c, h, w = x.shape
    if c != cfg.channels:
        raise ConfigError(f"EMA built for {cfg.channels} channels, input has {c}")
    g, cg = cfg.groups, cfg.group_channels
    gx = x.reshape(n * g, cg, h, w)

    # 1x1 path: shared conv over stacked row/column descriptors
    rows = F.avg_pool_rows(gx)                                   # (NG, cg, h, 1)
    cols = F.avg_pool_cols(gx).transpose(0, 1, 3, 2)             # (NG, cg, w, 1)
    hw = p.conv1x1(F.concat([rows, cols], axis=2))
    row_gate, col_gate = F.split(hw, [h, w], axis=2)
    gated = gx * F.sigmoid(row_gate) * F.sigmoid(col_gate.transpose(0, 1, 3, 2))
    x1 = p.gn(gated)

    # large-kernel path
    x2 = p.convk(gx)

    # cross-spatial aggregation
    a1 = F.softmax(F.global_avg_pool2d(x1).reshape(n * g, 1, cg), axis=-1)
    a2 = F.softmax(F.global_avg_pool2d(x2).reshape(n * g, 1, cg), axis=-1)
    y = F.matmul(a1, x2.reshape(n * g, cg, h * w)) + F.matmul(a2, x1.reshape(n * g, cg, h * w))
    gate = F.sigmoid(y.reshape(n * g, 1, h, w))
    return (gx * gate).reshape(n, c, h, w)


def ema_param_count(cfg: EmaConfig) -> int:
    cg, k = cfg.group_channels, cfg.large_branch_kernel
    return (cg * cg + cg) + (cg * cg * k * k + cg) + 2 * cg


class Bottleneck(Module):
    """conv3x3 -> conv3x3 [-> EMA] [+ input]."""

    def __init__(self, ci: int, co: int, shortcut: bool = True, ema: EmaConfig | None = None,
                 rng: np.random.Generator | None = None) -> None:
        super().__init__()
        if shortcut and ci != co:
            raise ConfigError(f"bottleneck shortcut needs equal channels, got {ci} -> {co}")
        self.shortcut = shortcut
        self.cv1 = ConvModule(ci, co, 3, rng=rng)
        self.cv2 = ConvModule(co, co, 3, rng=rng)
        self.ema = EMA(ema, rng=rng) if ema is not None else None

    def forward(self, x: Tensor) -> Tensor:
        y = self.cv2(self.cv1(x))
        if self.ema is not None:
            y = self.ema(y)
        return x + y if self.shortcut else y

    def describe(self) -> str:
        return f"Bottleneck(shortcut={self.shortcut})"


class FasterPWBottleneck(Module):
    """FasterPW block body in place of the two 3x3 convs: x + [EMA](project(silu(bn(expand(mix(x))))))."""

    def __init__(self, c: int, ema: EmaConfig | None = None, rng: np.random.Generator | None = None) -> None:
        super().__init__()
        self.body = FasterPWBlock(c, rng=rng)
        self.ema = EMA(ema, rng=rng) if ema is not None else None

    def forward(self, x: Tensor) -> Tensor:
        b = self.body
        y = b.mixer(x) if b.mixer is not None else x
        y = b.project(F.silu(b.bn(b.expand(y))))
        if self.ema is not None:
            y = self.ema(y)
        return x + y


def _bottleneck(kind: str, c: int, shortcut: bool, ema: EmaConfig | None, rng) -> Module:
    if kind == "bottleneck":
        return Bottleneck(c, c, shortcut, ema, rng=rng)
    if kind == "fasterpw":
        return FasterPWBottleneck(c, ema, rng=rng)
    raise ConfigError(f"unknown bottleneck kind {kind!r}")


class C2f(Module):
    """Split / bottleneck-chain / concat block; with ``ema=True`` it is C2f_EMA.

    ``block="fasterpw"`` swaps each bottleneck for a FasterPW body (C2f_FasterPW_EMA).
    """

    def __init__(self, ci: int, co: int, n: int = 1, shortcut: bool = True, ema: bool = False,
                 e: float = 0.5, ema_groups: int | None = None, ema_kernel: int = 5,
                 block: str = "bottleneck", rng: np.random.Generator | None = None) -> None:
        super().__init__()
        self.hidden = hidden = max(1, int(co * e))
        self.uses_ema, self.block_kind = ema, block
        self.ema_cfg = EmaConfig(hidden, ema_groups, ema_kernel) if ema else None
        self.cv1 = ConvModule(ci, 2 * hidden, 1, rng=rng)
        self.cv2 = ConvModule((2 + n) * hidden, co, 1, rng=rng)
        self.m = ModuleList(_bottleneck(block, hidden, shortcut, self.ema_cfg, rng) for _ in range(n))

    def forward(self, x: Tensor) -> Tensor:
        return c2f_ema_forward(x, self)

    def describe(self) -> str:
        name = "C2f_FasterPW" if self.block_kind == "fasterpw" else "C2f"
        return name + ("_EMA" if self.uses_ema else "")


def c2f_ema_forward(x: Tensor, p: C2f) -> Tensor:
    ys = F.split(p.cv1(x), [p.hidden, p.hidden], axis=1)
    for block in p.m:
        ys.append(block(ys[-1]))
    return p.cv2(F.concat_channels(ys))


class C3(Module):
    """Two 1x1 branches, a bottleneck chain on one, concat, 1x1 fuse."""

    def __init__(self, ci: int, co: int, n: int = 1, shortcut: bool = True, ema: bool = False,
                 e: float = 0.5, ema_groups: int | None = None, ema_kernel: int = 5,
                 block: str = "bottleneck", rng: np.random.Generator | None = None) -> None:
        super().__init__()
        self.hidden = hidden = max(1, int(co * e))
        self.uses_ema, self.block_kind = ema, block
        self.ema_cfg = EmaConfig(hidden, ema_groups, ema_kernel) if ema else None
        self.cv1 = ConvModule(ci, hidden, 1, rng=rng)
        self.cv2 = ConvModule(ci, hidden, 1, rng=rng)
        self.cv3 = ConvModule(2 * hidden, co, 1, rng=rng)
        self.m = ModuleList(_bottleneck(block, hidden, shortcut, self.ema_cfg, rng) for _ in range(n))

    def forward(self, x: Tensor) -> Tensor:
        y = self.cv1(x)
        for block in self.m:
            y = block(y)
        return self.cv3(F.concat_channels([y, self.cv2(x)]))

    def describe(self) -> str:
        name = "C3_FasterPW" if self.block_kind == "fasterpw" else "C3"
        return name + ("_EMA" if self.uses_ema else "")
