import numpy as np
import pytest

from epbcdet.core.params import ParamSet
from epbcdet.core.tensor import Tensor
from epbcdet.detector.model import BaselineStage, ModelConfig
from epbcdet.errors import ShapeError
from epbcdet.fasterpw import FasterPWBlock, FasterPWStage, PWConv, PwConvSpec, block_param_count, pwconv


def test_pwconv_scalar_and_hand_dot_product():
    x = np.array([[[[1.0]], [[2.0]]]])                        # one pixel, channels (1, 2)
    w = np.array([[1.0, 1.0], [1.0, -1.0]]).reshape(2, 2, 1, 1)
    np.testing.assert_array_equal(pwconv(Tensor(x), Tensor(w)).data.reshape(-1), [3.0, -1.0])
    xs = np.random.default_rng(0).standard_normal((1, 1, 3, 3))
    np.testing.assert_array_equal(pwconv(Tensor(xs), Tensor(np.full((1, 1, 1, 1), 2.5))).data, 2.5 * xs)


def test_pwconv_counts_and_errors():
    assert PwConvSpec(16, 32, bias=True).param_count == 544
    assert ParamSet.from_module(PWConv(PwConvSpec(16, 32, bias=True))).count() == 544
    with pytest.raises(ShapeError):
        pwconv(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.zeros((4, 2, 1, 1))))
    with pytest.raises(ShapeError):
        pwconv(Tensor(np.zeros((1, 2, 2, 2))), Tensor(np.zeros((4, 2, 3, 3))))


def test_block_identity_with_zero_projection_and_shapes():
    rng = np.random.default_rng(1)
    blk = FasterPWBlock(16, 2, rng=rng)
    x = rng.standard_normal((1, 16, 8, 8))
    blk.project.weight.data[:] = 0.0
    assert np.array_equal(blk(Tensor(x)).data, x)
    assert blk.expand(blk.mixer(Tensor(x))).shape == (1, 32, 8, 8)


def test_block_param_count():
    assert block_param_count(16, 2) == 1344
    assert ParamSet.from_module(FasterPWBlock(16, 2)).count() == 1344


def test_stage_shapes():
    x = Tensor(np.zeros((1, 16, 16, 16)))
    assert FasterPWStage(16, 32, 1)(x).shape == (1, 32, 8, 8)
    empty = FasterPWStage(16, 32, 0)
    assert empty.blocks() == []
    np.testing.assert_array_equal(empty(x).data, empty.down(x).data)


@pytest.mark.parametrize("ci,co,n", [(16, 32, 1), (32, 64, 2), (8, 16, 3)])
def test_stage_cheaper_than_baseline_c2f_stage(ci, co, n):
    fp = ParamSet.from_module(FasterPWStage(ci, co, n)).count()
    base = ParamSet.from_module(BaselineStage(ModelConfig(), ci, co, n, np.random.default_rng(0))).count()
    assert fp < base
