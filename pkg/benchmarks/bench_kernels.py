"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Every case runs on both backends with identical inputs; outputs are checked
to agree before timings are reported (best of ``--repeat``).
"""
from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from epbcdet import kernels
from epbcdet.core.params import ParamSet
from epbcdet.core.tensor import Tensor
from epbcdet.detector import build_model, compute_loss
from epbcdet.detector.model import ModelConfig
from epbcdet.carafe import CarafeConfig
from epbcdet.evalkit import DetectionBox


def _cases(rng):
    n, c, h, k, s = 4, 16, 48, 3, 1
    xp = rng.standard_normal((n, c, h + 2, h + 2))
    cols = kernels.im2col(xp, k, s, h, h)
    sigma, ku = 2, 5
    src = rng.standard_normal((2, 32, 24 + 4, 24 + 4))
    ker = rng.random((2, ku * ku, 48, 48))
    gout = rng.standard_normal((2, 32, 48, 48))
    xy = rng.uniform(0, 80, (600, 2))
    boxes = np.hstack([xy, xy + rng.uniform(4, 30, (600, 2))])
    boxes = boxes[np.argsort(-rng.random(600))]
    classes = rng.integers(0, 5, 600)

    model = build_model(ModelConfig(width=16, resolution=96, num_classes=5, carafe=CarafeConfig(compressed=8))
                        .with_switches(True, True, True, True), seed=0)
    img = rng.random((2, 3, 96, 96))
    targets = [[DetectionBox.truth(0, 10, 10, 40, 36)], [DetectionBox.truth(3, 50, 20, 90, 70)]]
    params = ParamSet.from_module(model)

    def train_step():
        params.zero_grad()
        compute_loss(model(Tensor(img)), targets).total.backward()
        return model.head.p3.cls1.weight.grad

    return {
        "im2col 4x16x48x48 k3": lambda: kernels.im2col(xp, k, s, h, h),
        "col2im 4x16x48x48 k3": lambda: kernels.col2im(cols, n, c, h + 2, h + 2, k, s, h, h),
        "carafe forward 2x32 24->48": lambda: kernels.carafe_forward(src, ker, ku, sigma),
        "carafe backward 2x32 24->48": lambda: kernels.carafe_backward(src, ker, gout, ku, sigma)[0],
        "nms 600 boxes": lambda: kernels.nms_keep(boxes, classes, 0.5),
        "detector fwd+bwd batch 2 @96": train_step,
    }


def run(repeat: int) -> list[dict]:
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled extension not available; timing the numpy fallback only", file=sys.stderr)
    rows = []
    results: dict[str, dict[str, np.ndarray]] = {}
    timings: dict[str, dict[str, float]] = {}
    for b in backends:
        kernels.use_backend(b)
        for name, fn in _cases(np.random.default_rng(0)).items():
            results.setdefault(name, {})[b] = np.asarray(fn()).copy()
            number = 1 if "detector" in name else 3
            best = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
            timings.setdefault(name, {})[b] = best
    for name, t in timings.items():
        outs = list(results[name].values())
        agree = all(np.allclose(outs[0], o, rtol=1e-12, atol=1e-12) for o in outs[1:])
        row = {"case": name, "agree": agree, **{f"{b}_ms": 1e3 * v for b, v in t.items()}}
        if "cython" in t:
            row["speedup"] = t["python"] / t["cython"]
        rows.append(row)
    return rows


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", help="also write the rows as JSON")
    a = p.parse_args(argv)
    rows = run(a.repeat)
    print(f"{'case':<32} {'python ms':>10} {'cython ms':>10} {'speedup':>8}  agree")
    for r in rows:
        cy = f"{r['cython_ms']:10.3f}" if "cython_ms" in r else f"{'-':>10}"
        sp = f"{r['speedup']:7.1f}x" if "speedup" in r else f"{'-':>8}"
        print(f"{r['case']:<32} {r['python_ms']:10.3f} {cy} {sp}  {r['agree']}")
    if a.json:
        with open(a.json, "w") as f:
            json.dump(rows, f, indent=2)
    return 0 if all(r["agree"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
