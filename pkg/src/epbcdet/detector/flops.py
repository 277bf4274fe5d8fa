"""Parameter and FLOP accounting at the configured resolution."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..core.flops import FlopCounter
from ..core.params import ParamSet
from ..core.tensor import Tensor, no_grad
from ..core.nn import Module
from .model import Detector


@dataclass
class ModelCost:
    params: int
    flops: int
    params_by_group: dict[str, int]
    flops_by_group: dict[str, int]

    @property
    def params_m(self) -> float:
        return self.params / 1e6

    @property
    def flops_g(self) -> float:
        return self.flops / 1e9


def count_flops(module: Module, x: np.ndarray) -> FlopCounter:
    """Run ``module`` once in eval mode under a counter."""
    was = module.training
    module.eval()
    try:
        with no_grad(), FlopCounter() as fc:
            module(Tensor(x))
    finally:
        module.train(was)
    return fc


def count_params_flops(model: Detector, resolution: int | None = None) -> ModelCost:
    """Trainable parameters and FLOPs (2 per multiply-add) for one image."""
    r = resolution or model.cfg.resolution
    ps = ParamSet.from_module(model)
    by_group: dict[str, int] = defaultdict(int)
    for name, t in ps.trainable():
        by_group[name.split(".", 1)[0]] += t.size
    fc = count_flops(model, np.zeros((1, 3, r, r)))
    return ModelCost(ps.count(trainable_only=True), fc.total, dict(by_group), dict(fc.by_group))
