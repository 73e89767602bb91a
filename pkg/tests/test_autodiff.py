import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dkseg import autodiff as ad
from dkseg import gradcheck, oracles
from dkseg.autodiff import Tensor

floats = st.floats(-3, 3, allow_nan=False, width=32)


def grads_of(fn, **leaves):
    with ad.Tape() as tape:
        ts = {k: tape.watch(k, v) for k, v in leaves.items()}
        loss = fn(**ts)
    return tape.backward(loss)


class TestTape:
    def test_unused_param_gets_zero_grad(self):
        g = grads_of(lambda a, b: ad.sum(a), a=np.ones(3), b=np.ones((2, 2)))
        assert np.array_equal(g["b"], np.zeros((2, 2)))

    def test_non_scalar_loss_rejected(self):
        with ad.Tape() as tape:
            x = tape.watch("x", np.ones(3))
            y = ad.scale(x, 2.0)
        with pytest.raises(ad.TapeError, match="scalar"):
            tape.backward(y)

    def test_duplicate_watch_rejected(self):
        with ad.Tape() as tape:
            tape.watch("x", np.ones(1))
            with pytest.raises(ad.TapeError):
                tape.watch("x", np.ones(1))

    def test_untracked_loss_rejected(self):
        with pytest.raises(ad.TapeError):
            ad.backward(ad.sum(Tensor(np.ones(3))))

    def test_ops_outside_tape_are_not_recorded(self):
        with ad.Tape() as tape:
            x = tape.watch("x", np.ones(2))
        y = ad.scale(x, 2.0)
        assert y.tape is None and not y.tracked
        assert len(tape.nodes) == 1

    def test_constants_get_no_gradient_path(self):
        c = Tensor(np.full(3, 2.0))
        g = grads_of(lambda x: ad.sum(ad.mul(x, c)), x=np.ones(3))
        assert np.allclose(g["x"], 2.0)

    def test_nested_tapes_restore_outer(self):
        with ad.Tape() as outer:
            x = outer.watch("x", np.ones(2))
            with ad.Tape():
                pass
            loss = ad.sum(ad.scale(x, 3.0))
        assert np.allclose(outer.backward(loss)["x"], 3.0)

    def test_module_level_backward(self):
        with ad.Tape() as tape:
            x = tape.watch("x", np.array([1.0, 2.0]))
            loss = ad.sum(ad.mul(x, x))
        assert np.allclose(ad.backward(loss)["x"], [2.0, 4.0])

    def test_operator_overloads(self):
        g = grads_of(lambda x: ad.sum((2.0 * x - 1.0) / (x + 1.0) + (-x)), x=np.array([1.0, 3.0]))
        # d/dx (2x-1)/(x+1) = 3/(x+1)^2, minus 1
        assert np.allclose(g["x"], [3 / 4 - 1, 3 / 16 - 1])


def test_non_finite_output_raises():
    with pytest.raises(ad.NonFiniteError, match="div"):
        ad.div(Tensor([1.0]), Tensor([0.0]))


def test_storage_dtype_is_float32_by_default():
    assert ad.default_dtype() is np.float32
    with ad.precision(np.float64):
        assert Tensor([1.0]).data.dtype == np.float64
    assert Tensor([1.0]).data.dtype == np.float32


@given(hnp.arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(1, 6)), elements=floats))
def test_softmax_rows_are_distributions(x):
    s = ad.softmax_rows(Tensor(x * 10)).data.astype(np.float64)
    assert np.all(s > 0) and np.all(s <= 1) and np.all(np.abs(s.sum(axis=1) - 1) <= 1e-6)


@given(hnp.arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e4, 1e4)))
def test_sigmoid_strictly_inside_unit_interval(z):
    s = ad.sigmoid(Tensor(z)).data
    assert np.all(s > 0) and np.all(s < 1)


@given(hnp.arrays(np.float64, st.integers(1, 10), elements=st.floats(-50, 50)),
       hnp.arrays(np.float64, st.integers(1, 10), elements=st.sampled_from([0.0, 1.0])))
def test_bce_with_logits_matches_naive(z, t):
    n = min(len(z), len(t))
    z, t = z[:n], t[:n]
    got = ad.bce_with_logits(Tensor(z), t).data.astype(np.float64)
    ref = [-(ti * math.log(oracles.sigmoid(zi)) + (1 - ti) * math.log(1 - oracles.sigmoid(zi)))
           if abs(zi) < 30 else max(zi, 0) - zi * ti for zi, ti in zip(z, t)]
    assert np.allclose(got, ref, atol=1e-5, rtol=1e-5)


@pytest.mark.parametrize("n_in,n_out", [(2, 4), (3, 6), (4, 2), (5, 7), (1, 3)])
def test_interp_matrix_rows_are_partitions_of_unity(n_in, n_out):
    m = ad.interp_matrix(n_in, n_out)
    assert m.shape == (n_out, n_in)
    assert np.allclose(m.sum(axis=1), 1.0) and np.all(m >= 0)


@pytest.mark.parametrize("h,w,oh,ow", [(2, 3, 4, 6), (4, 4, 3, 5), (3, 2, 3, 2)])
def test_resize_bilinear_matches_per_pixel_oracle(rng, h, w, oh, ow):
    x = rng.uniform(-1, 1, (2, 3, h, w))
    assert np.allclose(ad.resize_bilinear(Tensor(x), oh, ow).data, oracles.resize_bilinear(x, oh, ow), atol=1e-5)


@pytest.mark.parametrize("shape", [(3, 4), (2, 3, 4)])
def test_matmul_batched_matches_oracle(rng, shape):
    a = rng.uniform(-1, 1, shape)
    b = rng.uniform(-1, 1, shape[:-2] + (shape[-1], 5))
    got = ad.matmul(Tensor(a), Tensor(b)).data
    ref = np.array([oracles.matmul(x, y) for x, y in zip(a.reshape(-1, *shape[-2:]),
                                                          b.reshape(-1, shape[-1], 5))])
    assert np.allclose(got.reshape(ref.shape), ref, atol=1e-5)


def test_conv2d_rejects_channel_mismatch():
    with pytest.raises(ValueError):
        ad.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))


def test_split_requires_divisible_axis():
    with pytest.raises(ValueError):
        ad.split(Tensor(np.ones((2, 5))), 2)


def test_relu_pattern_replay_freezes_kinks():
    x = Tensor([-1.0, 2.0])
    with ad.record_relu_patterns() as masks:
        ad.relu(x)
    with ad.replay_relu_patterns(masks):
        y = ad.relu(Tensor([0.5, -0.5]))
    assert np.array_equal(y.data, [0.0, -0.5])


@pytest.mark.parametrize("case", range(len(gradcheck.op_cases(np.random.default_rng(0)))))
def test_each_op_passes_gradcheck(case):
    rng = np.random.default_rng(case)
    name, fn, inputs = gradcheck.op_cases(rng)[case]
    err = gradcheck.check(fn, inputs, rng)
    assert err < gradcheck.TOLERANCE, name


def test_relative_error_definition():
    assert gradcheck.relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.2])) == pytest.approx(0.2 / 2.2)
    assert gradcheck.relative_error(np.zeros(2), np.zeros(2)) == 0.0


@given(st.floats(-100, 100, width=32), st.integers(1, 4), st.integers(1, 4))
def test_upsample_preserves_constants_exactly(c, h, factor):
    x = np.full((1, 2, h, h + 1), c, dtype=np.float32)
    assert np.array_equal(ad.upsample_bilinear(Tensor(x), factor).data, np.full((1, 2, h * factor, (h + 1) * factor), c, np.float32))
