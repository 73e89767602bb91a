import numpy as np
import pytest

from hypothesis import given
from hypothesis import strategies as st

from dkseg import autodiff as ad
from dkseg import decoder, encoder, model
from dkseg.autodiff import Tensor


@pytest.mark.parametrize("c_d", [4, 32])
def test_every_stage_has_cd_channels(c_d):
    rng = np.random.default_rng(0)
    chans = (16, 24, 32, 48, 64)
    pyr = encoder.FeaturePyramid([Tensor(rng.random((1, c, 64 // s, 64 // s)))
                                  for c, s in zip(chans, encoder.STRIDES)])
    p = model.as_constants(decoder.init_params(rng, chans, c_d))
    dec = decoder.decode(decoder.unify_channels(pyr, p), p)
    assert dec.c_d == c_d
    for i, s in zip(range(1, 6), encoder.STRIDES):
        assert dec[i].shape == (1, c_d, 64 // s, 64 // s)
    assert dec[5] is dec.stages[4]


def test_deepest_stage_passes_through_unchanged():
    rng = np.random.default_rng(1)
    u = [Tensor(rng.random((1, 3, 2 ** (5 - i), 2 ** (5 - i)))) for i in range(1, 6)]
    dec = decoder.decode(u, model.as_constants(decoder.init_params(rng, (3,) * 5, 3)))
    assert dec[5] is u[4]


def test_fuse_rejects_spatial_mismatch():
    z = Tensor(np.zeros((1, 2, 3, 3)))
    with pytest.raises(ValueError, match="mismatch"):
        decoder.fuse(z, Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((2, 2, 3, 3))), Tensor(np.zeros(2)))


def test_decoder_outputs_nonnegative():
    rng = np.random.default_rng(2)
    u = [Tensor(rng.normal(size=(1, 4, 2 ** (5 - i), 2 ** (5 - i)))) for i in range(1, 6)]
    dec = decoder.decode(u, model.as_constants(decoder.init_params(rng, (4,) * 5, 4)))
    assert all(np.all(d.data >= 0) for d in dec.stages[:4])


@given(st.lists(st.integers(1, 6), min_size=5, max_size=5).map(sorted), st.integers(1, 6))
def test_cd_channels_for_any_config(chans, c_d):
    rng = np.random.default_rng(sum(chans) + c_d)
    pyr = encoder.FeaturePyramid([Tensor(rng.random((1, c, 2 ** (5 - i), 2 ** (5 - i))))
                                  for i, c in enumerate(chans, start=1)])
    p = model.as_constants(decoder.init_params(rng, chans, c_d))
    dec = decoder.decode(decoder.unify_channels(pyr, p), p)
    assert all(d.shape[1] == c_d for d in dec.stages)


def test_finest_stage_gradient_reaches_deepest_unified():
    rng = np.random.default_rng(3)
    p = model.as_constants(decoder.init_params(rng, (3,) * 5, 3))
    with ad.Tape() as tape:
        u = [Tensor(rng.random((1, 3, 2 ** (5 - i), 2 ** (5 - i)))) for i in range(1, 5)]
        u5 = tape.watch("u5", rng.random((1, 3, 1, 1)))
        loss = ad.sum(decoder.decode([*u, u5], p)[1])
    assert np.abs(tape.backward(loss)["u5"]).max() > 0
