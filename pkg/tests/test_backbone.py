import numpy as np
import pytest
from hypothesis import given, strategies as st

from bfan import backbone
from bfan.config import ModelConfig
from bfan.errors import ContractViolation
from bfan.layers import zero_params
from bfan.tensor import Tensor


def _params(cfg, seed=0, boundary=True):
    rng = np.random.default_rng(seed)
    params = {}
    backbone.init_saliency_encoder(params, cfg, rng)
    if boundary:
        backbone.init_boundary_encoder(params, cfg, rng)
    return params


def _img(h, w=None, seed=0):
    return Tensor(np.random.default_rng(seed).normal(size=(1, 3, h, w or h)))


def test_saliency_levels_64():
    cfg = ModelConfig(base_channels=4, boundary_channels=4)
    pyr = backbone.saliency_encoder(_params(cfg), _img(64), cfg)
    assert len(pyr) == 4
    assert pyr.spatial() == [(32, 32), (16, 16), (8, 8), (4, 4)]
    assert [m.shape[1] for m in pyr.maps] == [4, 8, 12, 16]


def test_boundary_scales_64_and_256():
    cfg = ModelConfig(input_size=(256, 256), base_channels=2, boundary_channels=2)
    params = _params(cfg)
    assert backbone.boundary_encoder(params, _img(64), cfg).spatial() == [(32, 32), (16, 16), (8, 8), (4, 4), (2, 2)]
    pyr = backbone.boundary_encoder(params, _img(256), cfg)
    assert pyr.spatial() == [(128, 128), (64, 64), (32, 32), (16, 16), (8, 8)]
    assert all(m.shape[1] == 2 for m in pyr.maps)


def test_zero_weights_zero_input_give_zero_features():
    cfg = ModelConfig(base_channels=4, boundary_channels=4)
    params = _params(cfg)
    zero_params(params)
    x = Tensor(np.zeros((2, 3, 64, 64)))
    for pyr in (backbone.saliency_encoder(params, x, cfg), backbone.boundary_encoder(params, x, cfg)):
        assert all(not m.data.any() for m in pyr.maps)


def test_fixed_seed_is_bit_identical():
    cfg = ModelConfig(base_channels=4, boundary_channels=4)
    a = backbone.saliency_encoder(_params(cfg, 7), _img(64, seed=3), cfg)
    b = backbone.saliency_encoder(_params(cfg, 7), _img(64, seed=3), cfg)
    for x, y in zip(a.maps, b.maps):
        assert x.data.tobytes() == y.data.tobytes()
    c = backbone.boundary_encoder(_params(cfg, 7), _img(64, seed=3), cfg)
    d = backbone.boundary_encoder(_params(cfg, 7), _img(64, seed=3), cfg)
    for x, y in zip(c.maps, d.maps):
        assert x.data.tobytes() == y.data.tobytes()


@pytest.mark.parametrize("shape", [(1, 3, 48, 64), (1, 3, 64, 40), (1, 1, 64, 64), (3, 64, 64)])
def test_illegal_inputs_rejected(shape):
    cfg = ModelConfig(base_channels=2, boundary_channels=2)
    with pytest.raises(ContractViolation, match="backbone"):
        backbone.saliency_encoder(_params(cfg), Tensor(np.zeros(shape)), cfg)


@given(base=st.integers(1, 6), hk=st.integers(1, 3), wk=st.integers(1, 3))
def test_channels_change_only_channel_dims(base, hk, wk):
    h, w = 32 * hk, 32 * wk
    cfg = ModelConfig(input_size=(h, w), base_channels=base, boundary_channels=base)
    pyr = backbone.saliency_encoder(_params(cfg, boundary=False), Tensor(np.zeros((1, 3, h, w))), cfg)
    assert pyr.spatial() == [(h >> m, w >> m) for m in range(1, 5)]
    assert [m.shape[1] for m in pyr.maps] == backbone.saliency_channels(cfg)
