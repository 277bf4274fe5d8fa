import numpy as np
import pytest

from epbcdet.core.gradcheck import check_gradients
from epbcdet.core.params import ParamSet
from epbcdet.core.tensor import Tensor
from epbcdet.ema import C2f, C3, EMA, Bottleneck, EmaConfig, default_groups, ema_param_count
from epbcdet.errors import ConfigError

from oracles import ema_reference


def _draw(seed):
    rng = np.random.default_rng(seed)
    c = int(rng.choice([4, 8, 16]))
    g = int(rng.choice([g for g in (1, 2, 4) if c % g == 0]))
    h, w = int(rng.integers(2, 7)), int(rng.integers(2, 7))
    ema = EMA(EmaConfig(c, g, int(rng.choice([3, 5]))), rng=rng)
    for t in ParamSet.from_module(ema).trainable():
        t[1].data = rng.standard_normal(t[1].shape)
    x = rng.standard_normal((int(rng.integers(1, 3)), c, h, w)) * rng.uniform(0.5, 3)
    return ema, x


@pytest.mark.parametrize("seed", range(20))
def test_matches_straight_line_oracle_bit_exact(seed):
    ema, x = _draw(seed)
    out = ema(Tensor(x)).data
    ref = ema_reference(x, ema.cfg.groups, ema.conv1x1.weight.data, ema.conv1x1.bias.data,
                        ema.convk.weight.data, ema.convk.bias.data, ema.gn.gamma.data, ema.gn.beta.data,
                        ema.gn.eps)
    assert out.shape == x.shape
    assert np.array_equal(out, ref)


@pytest.mark.parametrize("seed", range(10))
def test_output_bounded_by_input(seed):
    ema, x = _draw(100 + seed)
    out = ema(Tensor(x)).data
    assert np.all(np.abs(out) <= np.abs(x))


def test_param_count_and_group_sharing():
    cfg = EmaConfig(16, 4, 5)
    ema = EMA(cfg)
    assert ParamSet.from_module(ema).count() == ema_param_count(cfg)
    # 4 channels per group: 1x1 (16 + 4), 5x5 (400 + 4), GN affine 8
    assert ema_param_count(cfg) == 432


def test_default_groups():
    assert default_groups(64) == 8
    assert default_groups(12) == 6
    assert default_groups(7) == 7


def test_config_errors():
    with pytest.raises(ConfigError):
        EmaConfig(10, 4)
    with pytest.raises(ConfigError):
        EmaConfig(8, 2, 7)
    with pytest.raises(ConfigError):
        EMA(EmaConfig(8, 2))(Tensor(np.zeros((1, 4, 3, 3))))


def test_ema_gradients():
    rng = np.random.default_rng(7)
    ema = EMA(EmaConfig(8, 2, 5), rng=rng)
    x = Tensor(rng.standard_normal((2, 8, 4, 5)), requires_grad=True)
    res = check_gradients(lambda: ema(x), [("x", x), *ParamSet.from_module(ema).trainable()], seed=1,
                          max_coords=30)
    assert max(r.max_rel_error for r in res) < 1e-5


def test_c2f_variants_shapes_and_names():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((1, 16, 8, 8)))
    for kw, name in [({}, "C2f"), ({"ema": True}, "C2f_EMA"), ({"block": "fasterpw"}, "C2f_FasterPW"),
                     ({"block": "fasterpw", "ema": True}, "C2f_FasterPW_EMA")]:
        m = C2f(16, 32, n=2, rng=rng, **kw)
        assert m(x).shape == (1, 32, 8, 8)
        assert m.describe().startswith(name)
    assert C3(16, 24, n=1, ema=True, block="fasterpw", rng=rng)(x).shape == (1, 24, 8, 8)


def test_bottleneck_shortcut_requires_equal_widths():
    with pytest.raises(ConfigError):
        Bottleneck(8, 16, shortcut=True)
    assert Bottleneck(8, 16, shortcut=False)(Tensor(np.zeros((1, 8, 4, 4)))).shape == (1, 16, 4, 4)
