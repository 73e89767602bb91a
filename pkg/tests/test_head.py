import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dkseg import attention, decoder, head, model, oracles
from dkseg import autodiff as ad
from dkseg.autodiff import Tensor


def random_head(seed, c=4, gate_scale=1.0):
    rng = np.random.default_rng(seed)
    p = head.init_params(rng, c, c, c)
    p["dk.gate.w"] = rng.normal(0, gate_scale, (c, c))
    p["dk.split.w"] = rng.normal(0, 1, (c, 2 * c))
    return rng, p


@given(st.integers(0, 10_000), st.floats(0.1, 50.0))
def test_gate_inside_open_interval_and_update_is_convex(seed, scale):
    rng, p = random_head(seed, gate_scale=scale)
    pc = model.as_constants(p)
    a = Tensor(rng.normal(0, scale, (3, 4)))
    prev = head.DynKernel(Tensor(rng.normal(0, 2, (3, 4))), 5)
    trace = head.HeadTrace()
    k = head.update_kernel(a, prev, pc, 4, trace).k.data
    g = trace.gates[0][1].data
    assert np.all(g > 0) and np.all(g < 1)
    feat = ad.split(ad.linear(a, pc["dk.split.w"], pc["dk.split.b"]), 2)[0].data
    assert np.all(k >= np.minimum(feat, prev.k.data))
    assert np.all(k <= np.maximum(feat, prev.k.data))


def test_init_params_shapes_and_kaiming_bound():
    p = head.init_params(np.random.default_rng(0), 64, 64, 32)
    assert p["dk.phi1.w"].shape == (64, 64) and p["dk.phi2.w"].shape == (64, 32)
    assert p["dk.split.w"].shape == (32, 64) and p["dk.gate.w"].shape == (32, 32)
    assert p["dk.pred.b"].shape == (1,)
    bound = np.sqrt(6 / 64)
    assert np.abs(p["dk.phi2.w"]).max() <= bound


def test_assemble_requires_half_resolution_prev():
    d = Tensor(np.zeros((1, 2, 4, 4)))
    with pytest.raises(ValueError):
        head.assemble(d, head.StagePrediction(Tensor(np.zeros((1, 1, 4, 4))), 2))


def test_predict_checks_kernel_width():
    with pytest.raises(ValueError):
        head.predict(head.DynKernel(Tensor(np.zeros((1, 3))), 1), Tensor(np.zeros((1, 4, 2, 2))), Tensor([0.0]))


def test_trace_records_chain_in_order():
    rng, p = random_head(0, c=3)
    p["dk.phi1.w"] = rng.normal(size=(3, 3))
    dec = decoder.DecoderFeatures([Tensor(rng.random((1, 3, 2 ** (5 - i), 2 ** (5 - i)))) for i in range(1, 6)])
    trace = head.HeadTrace()
    preds = head.run_head(attention.GlobalContext(Tensor(rng.random((1, 3)))), dec, model.as_constants(p), trace)
    assert [pr.stage for pr in preds] == [5, 4, 3, 2, 1]
    assert [k.stage for k in trace.kernels] == [5, 4, 3, 2, 1]
    assert [s for s, _ in trace.gates] == [4, 3, 2, 1]


@pytest.mark.parametrize("seed", range(4))
def test_run_head_matches_oracle_chain(seed):
    rng, p = random_head(seed, c=3)
    p["dk.pred.b"] = rng.normal(size=1)
    g = rng.normal(size=(1, 3))
    stages = [rng.normal(size=(1, 3, 2 ** (5 - i), 2 ** (5 - i))) for i in range(1, 6)]
    preds = head.run_head(attention.GlobalContext(Tensor(g)),
                          decoder.DecoderFeatures([Tensor(s) for s in stages]), model.as_constants(p))
    ref = oracles.run_head(g[0], [s[0] for s in stages], p)
    for pr, r in zip(preds, ref):
        assert np.allclose(pr.logits.data[0, 0], r, atol=1e-5)


def test_finest_prediction_loss_reaches_phi_and_gate():
    cfg = model.ModelConfig(channels=(4, 4, 8, 8, 8), d_model=8, c_d=4)
    params = model.init_params(cfg, 6)
    rng = np.random.default_rng(6)
    with ad.Tape() as tape:
        p = tape.watch_all(params)
        out = model.forward(Tensor(rng.random((1, 3, 32, 32))), p, cfg)
        loss = ad.mean(ad.mul(out.logits, Tensor(rng.normal(size=out.logits.shape))))
    g = tape.backward(loss)
    for name in ("dk.phi1.w", "dk.gate.w"):
        assert np.abs(g[name]).max() > 0, name


@given(st.integers(0, 10_000), st.floats(0.1, 50.0))
def test_update_fixed_point_is_exact(seed, scale):
    rng, p = random_head(seed, gate_scale=scale)
    pc = model.as_constants(p)
    a = Tensor(rng.normal(0, scale, (2, 4)))
    feat = ad.split(ad.linear(a, pc["dk.split.w"], pc["dk.split.b"]), 2)[0]
    k = head.update_kernel(a, head.DynKernel(feat, 5), pc, 4).k.data
    assert np.array_equal(k, feat.data)
