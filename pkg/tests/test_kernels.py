import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epbcdet import _pykernels as py
from epbcdet import kernels

cy = pytest.importorskip("epbcdet._ckernels")


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 2), c=st.integers(1, 3), h=st.integers(3, 8), k=st.sampled_from([1, 3, 5]),
       stride=st.integers(1, 2), seed=st.integers(0, 999))
def test_im2col_col2im_parity(n, c, h, k, stride, seed):
    if k > h:
        return
    rng = np.random.default_rng(seed)
    xp = rng.standard_normal((n, c, h, h))
    ho = wo = (h - k) // stride + 1
    a, b = py.im2col(xp, k, stride, ho, wo), cy.im2col(xp, k, stride, ho, wo)
    np.testing.assert_array_equal(a, b)
    cols = rng.standard_normal(a.shape)
    np.testing.assert_allclose(py.col2im(cols, n, c, h, h, k, stride, ho, wo),
                               cy.col2im(cols, n, c, h, h, k, stride, ho, wo), rtol=0, atol=1e-13)


def test_col2im_is_adjoint_of_im2col():
    rng = np.random.default_rng(0)
    xp = rng.standard_normal((2, 3, 6, 6))
    cols = rng.standard_normal((3 * 9, 2 * 4 * 4))
    lhs = np.sum(py.im2col(xp, 3, 1, 4, 4) * cols)
    rhs = np.sum(xp * py.col2im(cols, 2, 3, 6, 6, 3, 1, 4, 4))
    assert lhs == pytest.approx(rhs, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(h=st.integers(1, 5), sigma=st.integers(1, 3), k=st.sampled_from([1, 3, 5]), seed=st.integers(0, 999))
def test_carafe_parity(h, sigma, k, seed):
    rng = np.random.default_rng(seed)
    r = k // 2
    xp = np.pad(rng.standard_normal((1, 2, h, h + 1)), ((0, 0), (0, 0), (r, r), (r, r)))
    kern = rng.random((1, k * k, sigma * h, sigma * (h + 1)))
    np.testing.assert_allclose(py.carafe_forward(xp, kern, k, sigma), cy.carafe_forward(xp, kern, k, sigma),
                               atol=1e-13)
    g = rng.standard_normal((1, 2, sigma * h, sigma * (h + 1)))
    for a, b in zip(py.carafe_backward(xp, kern, g, k, sigma), cy.carafe_backward(xp, kern, g, k, sigma)):
        np.testing.assert_allclose(a, b, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(0, 30), seed=st.integers(0, 999), thr=st.floats(0.05, 1.0))
def test_nms_keep_parity(n, seed, thr):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, 50, (n, 2))
    wh = rng.uniform(1, 30, (n, 2))
    boxes = np.ascontiguousarray(np.hstack([xy, xy + wh]))
    cls = rng.integers(0, 3, n).astype(np.int64)
    np.testing.assert_array_equal(py.nms_keep(boxes, cls, thr), cy.nms_keep(boxes, cls, thr))


def test_backend_switch():
    assert "python" in kernels.available_backends()
    before = kernels.BACKEND
    try:
        kernels.use_backend("python")
        assert kernels.BACKEND == "python"
        with pytest.raises(ValueError):
            kernels.use_backend("fortran")
    finally:
        kernels.use_backend(before)


def test_benchmark_backends_agree():
    import importlib.util
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
    spec = importlib.util.spec_from_file_location("bench_kernels", path)
    bench = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(bench)
    before = kernels.BACKEND
    try:
        rows = bench.run(repeat=1)
    finally:
        kernels.use_backend(before)
    assert rows and all(r["agree"] for r in rows)
