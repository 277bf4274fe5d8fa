"""A small module tree over the functional ops.

Attributes that are :class:`Tensor` instances become ParamSet entries
(trainable when ``requires_grad``); attributes that are :class:`Module`
instances become named children. Names join with dots.
"""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import flops
from . import functional as F
from .tensor import Tensor


class Module:
    _name: str | None = None

    def __init__(self) -> None:
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name: str, value) -> None:
        children = self.__dict__.get("_children")
        if children is not None:
            if isinstance(value, (Module, Tensor)):
                children[name] = value
                if isinstance(value, Module) and value._name is None:
                    value._name = name
            else:
                children.pop(name, None)
        object.__setattr__(self, name, value)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        counter = flops.active()
        if counter is None:
            return self.forward(*args, **kwargs)
        counter.push(self._name or type(self).__name__)
        try:
            return self.forward(*args, **kwargs)
        finally:
            counter.pop()

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for name, v in self._children.items():
            if isinstance(v, Module):
                yield name, v

    def named_tensors(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, v in self._children.items():
            full = f"{prefix}{name}"
            if isinstance(v, Tensor):
                yield full, v
            else:
                yield from v.named_tensors(full + ".")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors() if t.requires_grad]

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "training", mode)
        for _, m in self.children():
            m.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def layers(self, prefix: str = "") -> list[tuple[str, str]]:
        """Flattened (path, type) list; used for structural comparisons."""
        out = []
        for name, m in self.children():
            path = f"{prefix}{name}"
            out.append((path, m.describe()))
            out.extend(m.layers(path + "."))
        return out

    def describe(self) -> str:
        return type(self).__name__


class ModuleList(Module):
    def __init__(self, modules=()) -> None:
        super().__init__()
        self._items: list[Module] = []
        for m in modules:
            self.append(m)

    def append(self, m: Module) -> None:
        setattr(self, str(len(self._items)), m)
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Module:
        return self._items[i]


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Module):
    def __init__(self, ci: int, co: int, k: int = 1, stride: int = 1, pad: int | None = None,
                 groups: int = 1, bias: bool = True, rng: np.random.Generator | None = None) -> None:
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.ci, self.co, self.k, self.stride, self.groups = ci, co, k, stride, groups
        self.pad = k // 2 if pad is None else pad
        fan_in = (ci // groups) * k * k
        self.weight = Tensor(kaiming_uniform(rng, (co, ci // groups, k, k), fan_in), requires_grad=True)
        if bias:
            self.bias = Tensor(kaiming_uniform(rng, (co,), fan_in), requires_grad=True)
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.pad, self.groups)

    def describe(self) -> str:
        return f"Conv2d({self.ci}->{self.co}, k={self.k}, s={self.stride}, g={self.groups}, bias={self.bias is not None})"


class BatchNorm2d(Module):
    def __init__(self, c: int, eps: float = F.BN_EPS, momentum: float = F.BN_MOMENTUM) -> None:
        super().__init__()
        self.c, self.eps, self.momentum = c, eps, momentum
        self.gamma = Tensor(np.ones(c), requires_grad=True)
        self.beta = Tensor(np.zeros(c), requires_grad=True)
        self.running_mean = Tensor(np.zeros(c))
        self.running_var = Tensor(np.ones(c))

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(x, self.gamma, self.beta, self.running_mean.data, self.running_var.data,
                            self.training, self.momentum, self.eps)

    def describe(self) -> str:
        return f"BatchNorm2d({self.c})"


class GroupNorm(Module):
    def __init__(self, n_groups: int, c: int, eps: float = F.BN_EPS) -> None:
        super().__init__()
        self.n_groups, self.c, self.eps = n_groups, c, eps
        self.gamma = Tensor(np.ones(c), requires_grad=True)
        self.beta = Tensor(np.zeros(c), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return F.group_norm(x, self.n_groups, self.gamma, self.beta, self.eps)

    def describe(self) -> str:
        return f"GroupNorm({self.n_groups}, {self.c})"


class ConvModule(Module):
    """conv (no bias) -> batch norm -> optional SiLU."""

    def __init__(self, ci: int, co: int, k: int = 1, stride: int = 1, act: bool = True,
                 rng: np.random.Generator | None = None) -> None:
        super().__init__()
        self.conv = Conv2d(ci, co, k, stride, bias=False, rng=rng)
        self.bn = BatchNorm2d(co)
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        y = self.bn(self.conv(x))
        return F.silu(y) if self.act else y

    def describe(self) -> str:
        return f"ConvModule(act={self.act})"


class Upsample(Module):
    """Nearest-neighbour upsampling; the baseline CARAFE replaces."""

    def __init__(self, factor: int = 2) -> None:
        super().__init__()
        self.factor = factor

    def forward(self, x: Tensor) -> Tensor:
        return F.nearest_upsample(x, self.factor)

    def describe(self) -> str:
        return f"Upsample(x{self.factor})"
