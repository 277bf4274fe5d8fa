"""FasterPW: FasterNeXt-style residual blocks with a pointwise channel mixer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import functional as F
from .core.nn import BatchNorm2d, Conv2d, ConvModule, Module
from .core.tensor import Tensor
from .errors import ShapeError


@dataclass(frozen=True)
class PwConvSpec:
    ci: int
    co: int
    bias: bool = False

    @property
    def param_count(self) -> int:
        return self.ci * self.co + (self.co if self.bias else 0)


class PWConv(Conv2d):
    """1x1 convolution, stride 1, no padding."""

    def __init__(self, spec: PwConvSpec, rng: np.random.Generator | None = None) -> None:
        super().__init__(spec.ci, spec.co, 1, 1, 0, bias=spec.bias, rng=rng)
        self.spec = spec

    def forward(self, x: Tensor) -> Tensor:
        return pwconv(x, self.weight, self.bias)

    def describe(self) -> str:
        return f"PWConv({self.ci}->{self.co})"


def pwconv(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if weight.ndim != 4 or weight.shape[2:] != (1, 1):
        raise ShapeError(f"pwconv needs a Co x Ci x 1 x 1 weight, got {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"pwconv: input has {x.shape[1]} channels, weight expects {weight.shape[1]}")
    return F.conv2d(x, weight, bias, stride=1, pad=0, groups=1)


class FasterPWBlock(Module):
    """y = x + project(silu(bn(expand(mixer(x)))))."""

    def __init__(self, c: int, ratio: int = 2, mixer: bool = True,
                 rng: np.random.Generator | None = None) -> None:
        super().__init__()
        self.c, self.ratio = c, ratio
        self.mixer = PWConv(PwConvSpec(c, c), rng=rng) if mixer else None
        self.expand = PWConv(PwConvSpec(c, ratio * c), rng=rng)
        self.bn = BatchNorm2d(ratio * c)
        self.project = PWConv(PwConvSpec(ratio * c, c), rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return fasterpw_block_forward(x, self)

    def describe(self) -> str:
        return f"FasterPWBlock(c={self.c}, r={self.ratio}, mixer={self.mixer is not None})"


def fasterpw_block_forward(x: Tensor, p: FasterPWBlock) -> Tensor:
    if x.shape[1] != p.c:
        raise ShapeError(f"FasterPW block expects {p.c} channels, got {x.shape[1]}")
    y = p.mixer(x) if p.mixer is not None else x
    y = F.silu(p.bn(p.expand(y)))
    return x + p.project(y)


def block_param_count(c: int, ratio: int = 2, mixer: bool = True) -> int:
    return (c * c if mixer else 0) + 2 * (c * ratio * c) + 2 * ratio * c


class FasterPWStage(Module):
    """Stride-2 ConvModule followed by ``n`` FasterPW blocks."""

    def __init__(self, ci: int, co: int, n: int = 1, ratio: int = 2, mixer: bool = True,
                 rng: np.random.Generator | None = None) -> None:
        super().__init__()
        self.n = n
        self.down = ConvModule(ci, co, 3, 2, rng=rng)
        for m in range(n):
            setattr(self, f"block{m}", FasterPWBlock(co, ratio, mixer, rng=rng))

    def blocks(self) -> list[FasterPWBlock]:
        return [getattr(self, f"block{m}") for m in range(self.n)]

    def forward(self, x: Tensor) -> Tensor:
        return fasterpw_stage(x, self)


def fasterpw_stage(x: Tensor, stage: FasterPWStage) -> Tensor:
    y = stage.down(x)
    for block in stage.blocks():
        y = block(y)
    return y
