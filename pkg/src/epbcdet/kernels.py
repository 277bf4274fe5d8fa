"""Backend selection for the hot kernels.

The compiled extension is used when it imports; set ``EPBC_KERNELS=python``
to force the numpy fallback or ``EPBC_KERNELS=cython`` to make a missing
extension an error.
"""
from __future__ import annotations

import os
from types import ModuleType

import numpy as np

from . import _pykernels


def _select() -> tuple[str, ModuleType]:
    choice = os.environ.get("EPBC_KERNELS", "auto").lower()
    if choice == "python":
        return "python", _pykernels
    try:
        from . import _ckernels
    except ImportError:
        if choice == "cython":
            raise
        return "python", _pykernels
    return "cython", _ckernels


BACKEND, _impl = _select()


def use_backend(name: str) -> None:
    """Switch backend at runtime (benchmarks and parity tests)."""
    global BACKEND, _impl
    if name == "python":
        BACKEND, _impl = "python", _pykernels
    elif name == "cython":
        from . import _ckernels

        BACKEND, _impl = "cython", _ckernels
    else:
        raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> list[str]:
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
    except ImportError:
        return names
    return names + ["cython"]


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def im2col(xp, k, stride, ho, wo):
    return _impl.im2col(_c(xp), k, stride, ho, wo)


def col2im(cols, n, c, hp, wp, k, stride, ho, wo):
    return _impl.col2im(_c(cols), n, c, hp, wp, k, stride, ho, wo)


def carafe_forward(xp, kernels, k, sigma):
    return _impl.carafe_forward(_c(xp), _c(kernels), k, sigma)


def carafe_backward(xp, kernels, gout, k, sigma):
    return _impl.carafe_backward(_c(xp), _c(kernels), _c(gout), k, sigma)


def nms_keep(boxes, classes, threshold):
    boxes = _c(boxes).reshape(-1, 4)
    classes = np.ascontiguousarray(classes, dtype=np.int_)
    return _impl.nms_keep(boxes, classes, float(threshold)).astype(bool)
