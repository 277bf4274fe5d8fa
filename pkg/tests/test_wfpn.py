import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epbcdet.core.gradcheck import check_gradients
from epbcdet.core.nn import Conv2d
from epbcdet.core.params import ParamSet
from epbcdet.core.tensor import Tensor
from epbcdet.errors import ConfigError, ShapeError
from epbcdet.wfpn import DOWN, UP, WFPN, build_wfpn, normalized_weights, weighted_concat, weighted_fuse

EPS = 1e-4


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6))
def test_normalized_weights_bounds(w):
    n = normalized_weights(np.array(w), EPS)
    assert np.all(n >= 0)
    assert n.sum() < 1.0


def test_identical_inputs_return_the_input():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 3, 4, 4))
    for n in (2, 3, 5):
        out = weighted_fuse([Tensor(x) for _ in range(n)], Tensor(np.ones(n)), EPS).data
        assert np.max(np.abs(out - x) / np.abs(x)) <= 5e-5


def test_all_zero_weights_give_zero():
    out = weighted_fuse([Tensor(np.ones((1, 1, 2, 2)))] * 2, Tensor(np.array([-1.0, 0.0])))
    assert np.all(out.data == 0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 5))
def test_permutation_equivariance_exact(seed, n):
    rng = np.random.default_rng(seed)
    xs = [rng.standard_normal((1, 2, 3, 3)) for _ in range(n)]
    w = rng.uniform(-0.5, 2.0, n)
    ref = weighted_fuse([Tensor(x) for x in xs], Tensor(w)).data
    for perm in itertools.islice(itertools.permutations(range(n)), 12):
        out = weighted_fuse([Tensor(xs[i]) for i in perm], Tensor(w[list(perm)])).data
        assert np.array_equal(out, ref)


def test_fuse_bounded_by_inputs():
    rng = np.random.default_rng(1)
    xs = [rng.random((1, 1, 4, 4)) for _ in range(3)]
    w = np.array([0.3, 1.2, 0.0])
    out = weighted_fuse([Tensor(x) for x in xs], Tensor(w)).data
    s = normalized_weights(w).sum()
    stack = np.stack(xs)
    assert np.all(out >= stack.min(0) * s - 1e-15) and np.all(out <= stack.max(0) * s + 1e-15)


def test_weighted_concat_layout_and_inverse_scaling():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((1, 2, 3, 3)), rng.standard_normal((1, 3, 3, 3))
    w = np.array([0.7, 1.9])
    out = weighted_concat([Tensor(a), Tensor(b)], Tensor(w)).data
    assert out.shape == (1, 5, 3, 3)
    wn = np.maximum(w, 0) / (np.maximum(w, 0).sum() + EPS)
    np.testing.assert_allclose(out[:, :2] / wn[0], a, rtol=1e-15)
    np.testing.assert_allclose(out[:, 2:] / wn[1], b, rtol=1e-15)
    single = weighted_concat([Tensor(a)], Tensor(np.ones(1))).data
    np.testing.assert_allclose(single, a / (1 + EPS), rtol=1e-15)
    free = weighted_concat([Tensor(a), Tensor(b)], Tensor(w), normalize=False).data
    np.testing.assert_array_equal(free[:, :2], a * 0.7)
    np.testing.assert_array_equal(free[:, 2:], b * 1.9)
    with pytest.raises(ShapeError):
        weighted_concat([Tensor(a), Tensor(np.zeros((1, 1, 2, 3)))], Tensor(np.ones(2)))


def test_fusion_gradients():
    rng = np.random.default_rng(3)
    xs = [Tensor(rng.standard_normal((1, 2, 3, 3)), requires_grad=True) for _ in range(3)]
    w = Tensor(np.array([0.5, 1.3, 0.8]), requires_grad=True)
    res = check_gradients(lambda: weighted_fuse(xs, w), [*[(f"x{i}", x) for i, x in enumerate(xs)], ("w", w)])
    assert max(r.max_rel_error for r in res) < 1e-6
    wc = Tensor(np.array([0.9, 0.4]), requires_grad=True)
    res = check_gradients(lambda: weighted_concat(xs[:2], wc), [("x0", xs[0]), ("x1", xs[1]), ("w", wc)])
    assert max(r.max_rel_error for r in res) < 1e-6


def test_build_wfpn_three_levels():
    g = build_wfpn(3)
    assert [n.name for n in g.nodes] == ["P4_td", "P3_out", "P4_out", "P5_out"]
    assert g.in_degree() == {"P4_td": 2, "P3_out": 2, "P4_out": 3, "P5_out": 2}
    spec = {n.name: [(e.source, e.resample) for e in n.inputs] for n in g.nodes}
    assert spec["P4_td"] == [("P4_in", "identity"), ("P5_in", UP)]
    assert spec["P3_out"] == [("P3_in", "identity"), ("P4_td", UP)]
    assert set(spec["P4_out"]) == {("P4_in", "identity"), ("P4_td", "identity"), ("P3_out", DOWN)}
    assert set(spec["P5_out"]) == {("P5_in", "identity"), ("P4_out", DOWN)}
    assert g.is_acyclic()
    assert all(len(n.inputs) >= 2 for n in g.nodes)


def test_build_wfpn_degenerate_and_errors():
    g = build_wfpn(1)
    assert g.nodes == [] and g.outputs == {3: "P3_in"}
    with pytest.raises(ConfigError):
        build_wfpn(0)
    for levels in (2, 4, 5):
        g = build_wfpn(levels)
        assert g.is_acyclic() and all(len(n.inputs) >= 2 for n in g.nodes)


def _identity_down(c):
    conv = Conv2d(c, c, 1, stride=2, bias=False)
    conv.weight.data[:] = np.eye(c).reshape(c, c, 1, 1)
    return conv


def _identity_edge_convs(net):
    for _, t in net.named_tensors():
        if t.ndim == 4 and t.shape[2:] == (1, 1):
            co, ci = t.shape[:2]
            t.data[:] = 0.0
            for i in range(min(co, ci)):
                t.data[i, i] = 1.0
            if ci > co:  # average the extra input channels onto the outputs
                t.data[:] = 1.0 / ci


def test_constant_features_propagate():
    v = 0.75
    net = WFPN(build_wfpn(3), {3: 4, 4: 4, 5: 4}, down=_identity_down)
    _identity_edge_convs(net)
    feats = {3: np.full((1, 4, 8, 8), v), 4: np.full((1, 4, 4, 4), v), 5: np.full((1, 4, 2, 2), v)}
    out = net({k: Tensor(x) for k, x in feats.items()})
    for lvl, t in out.items():
        assert t.shape == feats[lvl].shape
        assert np.max(np.abs(t.data - v)) <= 3 * len(build_wfpn(3).nodes) * EPS * v


def test_wfpn_missing_level_and_gradients():
    rng = np.random.default_rng(4)
    net = WFPN(build_wfpn(3), {3: 3, 4: 4, 5: 5}, rng=rng)
    feats = {3: Tensor(rng.standard_normal((1, 3, 8, 8)), True), 4: Tensor(rng.standard_normal((1, 4, 4, 4)), True),
             5: Tensor(rng.standard_normal((1, 5, 2, 2)), True)}
    with pytest.raises(ConfigError):
        net({3: feats[3], 4: feats[4]})
    net.eval()

    def fn():
        o = net(feats)
        return (o[3] * o[3]).sum() + o[4].sum() + (o[5] * 0.5).sum()

    tensors = [(f"f{k}", t) for k, t in feats.items()] + ParamSet.from_module(net).trainable()
    res = check_gradients(fn, tensors, max_coords=12, scalar=True)
    assert max(r.max_rel_error for r in res) <= 1e-5
