import numpy as np
import pytest

from dkseg import autodiff as ad
from dkseg import encoder, model
from dkseg.autodiff import Tensor


@pytest.fixture(scope="module")
def setup():
    cfg = encoder.BackboneConfig()
    return cfg, model.as_constants(encoder.init_params(np.random.default_rng(0), cfg))


@pytest.mark.parametrize("size", [32, 64, 96, 256])
def test_pyramid_strides_and_channels(setup, size):
    cfg, p = setup
    pyr = encoder.encode(Tensor(np.random.default_rng(1).random((2, 3, size, size))), p, cfg)
    assert pyr.channels == list(cfg.channels)
    for f, s in zip(pyr.stages, encoder.STRIDES):
        assert f.shape[2:] == (size // s, size // s)
    assert pyr[1] is pyr.stages[0] and pyr[5] is pyr.stages[4]


def test_non_rectangular_input(setup):
    cfg, p = setup
    pyr = encoder.encode(Tensor(np.zeros((1, 3, 32, 64))), p, cfg)
    assert pyr[5].shape == (1, 64, 1, 2)


@pytest.mark.parametrize("shape", [(1, 3, 48, 64), (1, 3, 16, 16), (3, 32, 32)])
def test_bad_input_shapes_rejected(setup, shape):
    cfg, p = setup
    with pytest.raises(ValueError):
        encoder.encode(Tensor(np.zeros(shape)), p, cfg)


@pytest.mark.parametrize("channels", [(8, 8, 8, 8), (16, 8, 32, 48, 64)])
def test_config_validation(channels):
    with pytest.raises(ValueError):
        encoder.BackboneConfig(channels)


def test_batch_items_are_independent(setup):
    cfg, p = setup
    x = np.random.default_rng(2).random((3, 3, 32, 32))
    both = encoder.encode(Tensor(x), p, cfg)[5].data
    one = encoder.encode(Tensor(x[1:2]), p, cfg)[5].data
    assert np.allclose(both[1:2], one, atol=1e-5)


def test_param_names_follow_stage_layout():
    p = encoder.init_params(np.random.default_rng(0), encoder.BackboneConfig(blocks_per_stage=1))
    assert "enc3.down.w" in p and "enc3.block0.conv2.b" in p and "enc3.block1.conv1.w" not in p
    assert p["enc1.down.w"].shape == (16, 3, 3, 3)


def test_gradient_reaches_first_conv_from_deepest_stage():
    cfg = encoder.BackboneConfig()
    params = encoder.init_params(np.random.default_rng(4), cfg)
    with ad.Tape() as tape:
        p = tape.watch_all(params)
        loss = ad.sum(encoder.encode(Tensor(np.random.default_rng(5).random((1, 3, 32, 32))), p, cfg)[5])
    g = tape.backward(loss)["enc1.down.w"]
    assert np.all(np.isfinite(g)) and np.abs(g).max() > 0
