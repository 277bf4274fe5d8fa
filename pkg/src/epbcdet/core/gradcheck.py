"""Central finite-difference checks against the tape gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    checked: int

    def passed(self, tol: float) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error <= tol)


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Normwise relative error max|a - n| / max(max|a|, max|n|)."""
    scale = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0))
    diff = np.max(np.abs(analytic - numeric), initial=0.0)
    if scale == 0.0:
        return float(diff)
    return float(diff / scale)


def _projected_loss(out: Tensor, proj: np.ndarray) -> Tensor:
    return (out * Tensor(proj)).sum()


def check_gradients(fn: Callable[[], Tensor], tensors: Sequence[tuple[str, Tensor]],
                    step: float = 1e-5, seed: int = 0, max_coords: int | None = None,
                    scalar: bool = False) -> list[GradCheckResult]:
    """Compare tape gradients of ``fn`` with central differences.

    Non-scalar outputs are projected onto a fixed random direction so every
    output element contributes. ``max_coords`` subsamples coordinates of
    large tensors (chosen by a seeded generator).
    """
    rng = np.random.default_rng(seed)
    out = fn()
    proj = None if scalar else rng.standard_normal(out.shape)

    def loss() -> Tensor:
        o = fn()
        return o if proj is None else _projected_loss(o, proj)

    for _, t in tensors:
        t.grad = None
    loss().backward()
    analytic = {name: (np.zeros(t.shape) if t.grad is None else t.grad.copy()) for name, t in tensors}

    results = []
    for name, t in tensors:
        if not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        numeric = np.empty(coords.size)
        for i, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + step
            fp = loss().item()
            flat[c] = orig - step
            fm = loss().item()
            flat[c] = orig
            numeric[i] = (fp - fm) / (2.0 * step)
        a = analytic[name].reshape(-1)[coords]
        results.append(GradCheckResult(name, rel_error(a, numeric), int(coords.size)))
    return results


def check_directional(fn: Callable[[], Tensor], tensors: Sequence[tuple[str, Tensor]],
                      n_directions: int = 3, step: float = 1e-5, seed: int = 0,
                      scalar: bool = True) -> GradCheckResult:
    """Directional-derivative check covering every coordinate of every tensor at once."""
    rng = np.random.default_rng(seed)
    out = fn()
    proj = None if scalar else rng.standard_normal(out.shape)

    def loss() -> float:
        o = fn()
        return (o if proj is None else _projected_loss(o, proj)).item()

    for _, t in tensors:
        t.grad = None
    o = fn()
    (o if proj is None else _projected_loss(o, proj)).backward()
    grads = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for _, t in tensors]
    analytic, numeric = [], []
    for _ in range(n_directions):
        dirs = [rng.standard_normal(t.shape) for _, t in tensors]
        analytic.append(float(sum(np.sum(g * d) for g, d in zip(grads, dirs))))
        origs = [t.data.copy() for _, t in tensors]
        for (_, t), d, o0 in zip(tensors, dirs, origs):
            t.data[...] = o0 + step * d
        fp = loss()
        for (_, t), d, o0 in zip(tensors, dirs, origs):
            t.data[...] = o0 - step * d
        fm = loss()
        for (_, t), o0 in zip(tensors, origs):
            t.data[...] = o0
        numeric.append((fp - fm) / (2.0 * step))
    err = rel_error(np.array(analytic), np.array(numeric))
    return GradCheckResult("directional", err, n_directions)
