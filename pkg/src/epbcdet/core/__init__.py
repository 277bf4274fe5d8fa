"""Tensor core: tape, primitive ops, modules, parameter sets, gradient checks."""
from . import functional
from .gradcheck import check_directional, check_gradients, rel_error
from .nn import BatchNorm2d, Conv2d, ConvModule, GroupNorm, Module, ModuleList, Upsample
from .params import ParamSet, load_checkpoint, save_checkpoint
from .tensor import Tensor, as_tensor, grad_enabled, no_grad

__all__ = [
    "Tensor", "as_tensor", "no_grad", "grad_enabled", "functional",
    "Module", "ModuleList", "Conv2d", "BatchNorm2d", "GroupNorm", "ConvModule", "Upsample",
    "ParamSet", "save_checkpoint", "load_checkpoint",
    "check_gradients", "check_directional", "rel_error",
]
