"""The finite-difference gradient suite behind ``epbcdet gradcheck``.

Three tiers with their own tolerances: single primitives, composite
modules, and the end-to-end detector loss on a micro configuration.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..carafe import CARAFE, CarafeConfig
from ..core import functional as F
from ..core.gradcheck import check_directional, check_gradients
from ..core.nn import Module
from ..core.params import ParamSet
from ..core.tensor import Tensor
from ..detector.loss import compute_loss
from ..detector.model import ModelConfig, build_model
from ..ema import C2f, EMA, EmaConfig
from ..evalkit.boxes import DetectionBox
from ..fasterpw import FasterPWBlock
from ..wfpn import WFPN, build_wfpn, weighted_concat, weighted_fuse

TOLERANCES = {"primitive": 1e-6, "composite": 1e-5, "end-to-end": 1e-4}
MICRO_WIDTH = 8
MICRO_RESOLUTION = 64


@dataclass
class SuiteEntry:
    name: str
    tier: str
    max_rel_error: float
    coords: int
    seconds: float

    @property
    def tol(self) -> float:
        return TOLERANCES[self.tier]

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error <= self.tol)


def _t(rng, *shape, low=None, high=None, away=None) -> Tensor:
    if low is not None:
        a = rng.uniform(low, high, size=shape)
    else:
        a = rng.standard_normal(shape)
    if away is not None:
        # keep values off a kink at zero
        a = np.where(np.abs(a) < away, np.sign(a + 1e-300) * away + a, a)
    return Tensor(a, requires_grad=True)


def _module_tensors(m: Module, extra: list[tuple[str, Tensor]]) -> list[tuple[str, Tensor]]:
    return extra + list(ParamSet.from_module(m).trainable())


def _primitive_cases(rng) -> list[tuple[str, Callable[[], Tensor], list[tuple[str, Tensor]]]]:
    cases = []

    def add(name, fn, *tensors):
        cases.append((name, fn, [(f"arg{i}", t) for i, t in enumerate(tensors)]))

    a, b = _t(rng, 3, 4), _t(rng, 4)
    add("add (broadcast)", lambda: a + b, a, b)
    add("sub (broadcast)", lambda: a - b, a, b)
    add("mul (broadcast)", lambda: a * b, a, b)
    pos = _t(rng, 3, 4, low=0.5, high=2.0)
    add("div", lambda: a / pos, a, pos)
    add("power", lambda: F.power(pos, 1.7), pos)
    add("exp", lambda: F.exp(a), a)
    add("log", lambda: F.log(pos), pos)
    c = Tensor(a.data + np.where(rng.random(a.shape) < 0.5, 0.5, -0.5), requires_grad=True)
    add("maximum", lambda: F.maximum(a, c), a, c)
    add("minimum", lambda: F.minimum(a, c), a, c)
    add("sigmoid", lambda: F.sigmoid(a), a)
    add("silu", lambda: F.silu(a), a)
    k = _t(rng, 3, 4, away=0.05)
    add("relu", lambda: F.relu(k), k)
    add("softplus", lambda: F.softplus(a), a)
    add("softmax", lambda: F.softmax(a, axis=-1), a)
    y = (rng.random(a.shape) < 0.3).astype(np.float64)
    add("bce_with_logits", lambda: F.bce_with_logits(a, y), a)
    x4 = _t(rng, 2, 3, 4, 5)
    add("sum (axis)", lambda: F.sum(x4, axis=(0, 2)), x4)
    add("mean", lambda: F.mean(x4, axis=1, keepdims=True), x4)
    add("reshape", lambda: x4.reshape(6, 20), x4)
    add("transpose", lambda: x4.transpose(0, 2, 3, 1), x4)
    add("index (basic)", lambda: x4[:, 1:, ::2], x4)
    rows = np.array([0, 1, 1])
    add("index (fancy, repeated)", lambda: x4[rows, :, 2, np.array([0, 3, 3])], x4)
    x4b = _t(rng, 2, 2, 4, 5)
    add("concat", lambda: F.concat([x4, x4b], axis=1), x4, x4b)
    add("split", lambda: F.split(x4, [1, 2], axis=1)[1] * 2.0 + F.split(x4, [1, 2], axis=1)[0].sum(), x4)
    m1, m2 = _t(rng, 2, 3, 4), _t(rng, 2, 4, 5)
    add("matmul (batched)", lambda: F.matmul(m1, m2), m1, m2)
    xc, wc, bc = _t(rng, 2, 4, 7, 6), _t(rng, 6, 2, 3, 3), _t(rng, 6)
    add("conv2d (groups=2, stride 2)", lambda: F.conv2d(xc, wc, bc, stride=2, pad=1, groups=2), xc, wc, bc)
    w1 = _t(rng, 5, 4, 1, 1)
    add("conv2d (1x1)", lambda: F.conv2d(xc, w1, None), xc, w1)
    add("global_avg_pool2d", lambda: F.global_avg_pool2d(xc), xc)
    add("avg_pool_rows", lambda: F.avg_pool_rows(xc), xc)
    add("avg_pool_cols", lambda: F.avg_pool_cols(xc), xc)
    g, be = _t(rng, 4, low=0.5, high=1.5), _t(rng, 4)
    rm, rv = np.zeros(4), np.ones(4)
    add("batch_norm (train)", lambda: F.batch_norm(xc, g, be, rm.copy(), rv.copy(), True), xc, g, be)
    add("batch_norm (eval)", lambda: F.batch_norm(xc, g, be, rm + 0.1, rv + 0.5, False), xc, g, be)
    add("group_norm", lambda: F.group_norm(xc, 2, g, be), xc, g, be)
    add("nearest_upsample", lambda: F.nearest_upsample(xc, 2), xc)
    xs = _t(rng, 1, 8, 3, 2)
    add("pixel_shuffle", lambda: F.pixel_shuffle(xs, 2), xs)
    xr = _t(rng, 1, 3, 4, 5)
    kr = Tensor(F.softmax(Tensor(rng.standard_normal((1, 9, 8, 10))), axis=1).data, requires_grad=True)
    add("carafe_reassemble", lambda: F.carafe_reassemble(xr, kr, 3, 2), xr, kr)
    return cases


def _composite_cases(rng):
    cases = []
    ema = EMA(EmaConfig(8, 2), rng=rng)
    xe = _t(rng, 2, 8, 5, 6)
    cases.append(("EMA", lambda: ema(xe), _module_tensors(ema, [("x", xe)])))

    c2f = C2f(6, 8, 1, shortcut=False, ema=True, ema_groups=2, rng=rng)
    xc = _t(rng, 2, 6, 5, 5)
    cases.append(("C2f_EMA", lambda: c2f(xc), _module_tensors(c2f, [("x", xc)])))

    blk = FasterPWBlock(6, 2, rng=rng)
    xb = _t(rng, 2, 6, 4, 4)
    cases.append(("FasterPW block", lambda: blk(xb), _module_tensors(blk, [("x", xb)])))

    f1, f2, f3 = _t(rng, 1, 3, 4, 4), _t(rng, 1, 3, 4, 4), _t(rng, 1, 3, 4, 4)
    wf = _t(rng, 3, low=0.2, high=1.5)
    cases.append(("weighted_fuse", lambda: weighted_fuse([f1, f2, f3], wf),
                  [("x0", f1), ("x1", f2), ("x2", f3), ("w", wf)]))
    c1, c2 = _t(rng, 1, 2, 4, 4), _t(rng, 1, 3, 4, 4)
    wc = _t(rng, 2, low=0.2, high=1.5)
    cases.append(("weighted_concat", lambda: weighted_concat([c1, c2], wc),
                  [("x0", c1), ("x1", c2), ("w", wc)]))

    car = CARAFE(4, CarafeConfig(2, 3, 3, 3), rng=rng)
    xk = _t(rng, 1, 4, 4, 5)
    cases.append(("CARAFE", lambda: car(xk), _module_tensors(car, [("x", xk)])))

    net = WFPN(build_wfpn(3), {3: 4, 4: 6, 5: 8}, rng=rng)
    feats = {3: _t(rng, 1, 4, 8, 8), 4: _t(rng, 1, 6, 4, 4), 5: _t(rng, 1, 8, 2, 2)}
    for node in net._node_params:
        node.w.data[:] = rng.uniform(0.3, 1.5, size=node.w.shape)

    def wfpn_out():
        out = net(feats)
        return F.concat([out[lvl].reshape(-1) for lvl in (3, 4, 5)], axis=0)

    cases.append(("WFPN (3 levels)", wfpn_out,
                  _module_tensors(net, [(f"P{lvl}", t) for lvl, t in feats.items()])))
    return cases


def micro_model_case(seed: int = 0, all_on: bool = True):
    """The 1-image micro detector and its total-loss closure."""
    cfg = ModelConfig(width=MICRO_WIDTH, resolution=MICRO_RESOLUTION, num_classes=3,
                      carafe=CarafeConfig(compressed=4)).with_switches(all_on, all_on, all_on, all_on)
    model = build_model(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    x = Tensor(rng.random((1, 3, MICRO_RESOLUTION, MICRO_RESOLUTION)))
    targets = [[DetectionBox.truth(0, 6.0, 9.0, 22.0, 27.0), DetectionBox.truth(2, 20.0, 24.0, 58.0, 60.0)]]

    def loss() -> Tensor:
        return compute_loss(model(x), targets).total

    return model, loss


def run_suite(seed: int = 0, tiers: tuple[str, ...] = ("primitive", "composite", "end-to-end"),
              max_coords: int = 24, e2e_coords: int = 2,
              progress: Callable[[SuiteEntry], None] | None = None) -> list[SuiteEntry]:
    rng = np.random.default_rng(seed)
    results: list[SuiteEntry] = []

    def record(entry: SuiteEntry) -> None:
        results.append(entry)
        if progress is not None:
            progress(entry)

    for tier, maker in (("primitive", _primitive_cases), ("composite", _composite_cases)):
        if tier not in tiers:
            continue
        for name, fn, tensors in maker(rng):
            t0 = time.perf_counter()
            # primitives are small enough to check every coordinate
            res = check_gradients(fn, tensors, seed=seed, max_coords=None if tier == "primitive" else max_coords)
            record(SuiteEntry(name, tier, max(r.max_rel_error for r in res), sum(r.checked for r in res),
                              time.perf_counter() - t0))
    if "end-to-end" in tiers:
        model, loss = micro_model_case(seed)
        tensors = list(ParamSet.from_module(model).trainable())
        t0 = time.perf_counter()
        res = check_gradients(loss, tensors, seed=seed, max_coords=e2e_coords, scalar=True)
        record(SuiteEntry("micro-model loss (sampled coords)", "end-to-end",
                          max(r.max_rel_error for r in res), sum(r.checked for r in res),
                          time.perf_counter() - t0))
        t0 = time.perf_counter()
        d = check_directional(loss, tensors, n_directions=3, seed=seed)
        record(SuiteEntry("micro-model loss (all params, directional)", "end-to-end", d.max_rel_error,
                          sum(t.size for _, t in tensors), time.perf_counter() - t0))
    return results
