"""Built-in example and invariant checks, run by ``dkseg selftest``.

Each check is a plain function that raises ``AssertionError`` on failure.
Expected values come from closed forms or from :mod:`dkseg.oracles`.
"""

from __future__ import annotations

import math
import tempfile
import time
import traceback
from pathlib import Path
from typing import Callable

import numpy as np

from . import attention, checkpoint, data, decoder, encoder, head, losses, metrics, model, optim, oracles, pnm
from . import autodiff as ad
from .autodiff import Tensor
from .train import augment

CHECKS: dict[str, Callable[[], None]] = {}


def check(fn: Callable[[], None]) -> Callable[[], None]:
    CHECKS[fn.__name__.removeprefix("check_")] = fn
    return fn


def close(a, b, tol=1e-5) -> bool:
    return np.allclose(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64), atol=tol, rtol=0)


def _rng(seed=0):
    return np.random.default_rng(seed)


# tensor ops

@check
def check_conv2d_examples():
    ones = Tensor(np.ones((1, 1, 2, 2)))
    assert close(ad.conv2d(ones, Tensor(np.ones((1, 1, 1, 1)))).data, np.ones((1, 1, 2, 2)))
    x = Tensor(_rng().uniform(-1, 1, (1, 2, 3, 3)))
    out = ad.conv2d(x, Tensor(np.zeros((1, 2, 3, 3))), Tensor([1.5]), pad=1)
    assert close(out.data, 1.5)
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    w = np.ones((1, 1, 3, 3))
    expected = oracles.conv2d(x, w, pad=1)
    assert close(expected, [[[[10, 10], [10, 10]]]])
    assert close(ad.conv2d(Tensor(x), Tensor(w), pad=1).data, expected)


@check
def check_conv2d_oracle():
    rng = _rng(1)
    for stride, k in ((1, 3), (2, 3), (1, 1)):
        x = rng.uniform(-1, 1, (2, 3, 6, 6))
        w = rng.uniform(-1, 1, (4, 3, k, k))
        b = rng.uniform(-1, 1, 4)
        pad = (k - 1) // 2
        got = ad.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, pad=pad).data
        assert got.shape == (2, 4, (6 + 2 * pad - k) // stride + 1, (6 + 2 * pad - k) // stride + 1)
        assert close(got, oracles.conv2d(x, w, b, stride, pad))


@check
def check_global_avg_pool_examples():
    assert close(ad.global_avg_pool(Tensor(np.full((1, 2, 3, 3), 3.0))).data, [[3.0, 3.0]])
    assert close(ad.global_avg_pool(Tensor([[[[1.0, 2.0], [3.0, 4.0]]]])).data, [[2.5]])
    assert close(ad.global_avg_pool(Tensor(np.zeros((2, 3, 4, 4)))).data, np.zeros((2, 3)))
    x = _rng(2).uniform(-1, 1, (2, 3, 4, 5))
    assert close(ad.global_avg_pool(Tensor(x)).data, oracles.mean_pool(x))


@check
def check_matmul_examples():
    a = _rng(3).uniform(-1, 1, (2, 2))
    assert close(ad.matmul(Tensor(np.eye(2)), Tensor(a)).data, a)
    assert close(ad.matmul(Tensor(a), Tensor(np.zeros((2, 2)))).data, 0.0)
    b = _rng(4).uniform(-1, 1, (2, 2))
    assert close(ad.matmul(Tensor(a), Tensor(b)).data, oracles.matmul(a, b))


@check
def check_softmax_examples():
    assert close(ad.softmax_rows(Tensor(np.full((1, 4), 0.7))).data, [[0.25] * 4])
    assert close(ad.softmax_rows(Tensor([[5.0]])).data, [[1.0]])
    assert close(ad.softmax_rows(Tensor([[0.0, math.log(3.0)]])).data, [[0.25, 0.75]], 1e-6)
    x = _rng(5).uniform(-30, 30, (6, 7))
    s = ad.softmax_rows(Tensor(x)).data
    assert np.all(np.abs(s.astype(np.float64).sum(axis=1) - 1) <= 1e-6)
    assert np.all((s > 0) & (s <= 1))


@check
def check_elementwise_examples():
    assert close(ad.sigmoid(Tensor([0.0])).data, [0.5])
    assert close(ad.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])
    x = _rng(6).uniform(-1, 1, (3, 4))
    assert close(ad.linear(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4))).data, x)
    m = ad.mul(Tensor(np.full((1, 1, 2, 2), 2.0)), Tensor(np.ones((1, 3, 2, 2))))
    assert m.shape == (1, 3, 2, 2) and close(m.data, 2.0)


@check
def check_upsample_examples():
    assert close(ad.upsample_bilinear(Tensor(np.full((1, 2, 3, 3), 5.0)), 2).data, 5.0)
    x = _rng(7).uniform(-1, 1, (1, 2, 3, 3))
    assert close(ad.upsample_bilinear(Tensor(x), 1).data, x)
    x = np.array([[[[0.0, 1.0], [1.0, 2.0]]]])
    up = ad.upsample_bilinear(Tensor(x), 2).data
    assert close(up, oracles.upsample_bilinear(x, 2))
    assert close(up[0, 0, 0], [0.0, 0.25, 0.75, 1.0])


@check
def check_backward_examples():
    x = _rng(8).uniform(-1, 1, 5)
    with ad.Tape() as tape:
        w = tape.watch("w", np.ones(5))
        loss = ad.sum(ad.mul(w, Tensor(x)))
    assert close(tape.backward(loss)["w"], x)
    with ad.Tape() as tape:
        z = tape.watch("z", np.zeros(1))
        loss = ad.sum(ad.scale(ad.sigmoid(z), 3.0))
    assert close(tape.backward(loss)["z"], [0.75])
    # a tensor used twice receives the sum of both path gradients
    with ad.Tape() as tape:
        a = tape.watch("a", np.array([2.0]))
        loss = ad.sum(ad.add(ad.mul(a, a), ad.scale(a, 3.0)))
    assert close(tape.backward(loss)["a"], [7.0])
    try:
        tape.backward(loss)
    except ad.TapeError:
        pass
    else:
        raise AssertionError("second backward on one tape must fail")


# model parts

@check
def check_encoder_shapes():
    cfg = encoder.BackboneConfig()
    p = model.as_constants(encoder.init_params(_rng(9), cfg))
    pyr = encoder.encode(Tensor(np.zeros((1, 3, 64, 64))), p, cfg)
    assert [f.shape for f in pyr.stages] == [(1, 16, 32, 32), (1, 24, 16, 16), (1, 32, 8, 8),
                                             (1, 48, 4, 4), (1, 64, 2, 2)]
    assert all(np.isfinite(f.data).all() for f in pyr.stages)


@check
def check_attention_examples():
    rng = _rng(10)
    d = 8
    p = model.as_constants(attention.init_params(rng, (4, 4, 4, 4, 4), d))
    for i in range(2, 6):
        p[f"ea.proj{i}.w"], p[f"ea.proj{i}.b"] = p["ea.proj1.w"], p["ea.proj1.b"]
    vec = Tensor(rng.uniform(-1, 1, (2, 4)))
    ctx = attention.encoder_attention([vec] * 5, p)
    assert close(ctx.attention_weights.data, 0.2, 1e-6)
    p = model.as_constants(attention.init_params(rng, (2, 3, 3, 4, 5), d))
    p["ea.q.w"] = Tensor(np.zeros((d, d)))
    pooled = [Tensor(rng.uniform(-1, 1, (1, c))) for c in (2, 3, 3, 4, 5)]
    ctx = attention.encoder_attention(pooled, p)
    assert close(ctx.attention_weights.data, 0.2, 1e-6)
    tokens = np.stack([pooled[i].data[0] @ p[f"ea.proj{i + 1}.w"].data + p[f"ea.proj{i + 1}.b"].data
                       for i in range(5)])
    assert close(ctx.g.data[0], (tokens @ p["ea.v.w"].data).mean(axis=0))


@check
def check_attention_oracle():
    rng = _rng(11)
    q, k, v = (rng.uniform(-1, 1, (2, 3)) for _ in range(3))
    out, w = attention.scaled_dot_product_attention(Tensor(q), Tensor(k), Tensor(v))
    ref_out, ref_w = oracles.attention(q, k, v)
    assert close(out.data, ref_out) and close(w.data, ref_w)
    p = attention.init_params(rng, (2, 3, 3, 4, 5), 6)
    pooled = [rng.uniform(-1, 1, (1, c)) for c in (2, 3, 3, 4, 5)]
    ctx = attention.encoder_attention([Tensor(x) for x in pooled], model.as_constants(p))
    g, weights = oracles.encoder_attention([x[0] for x in pooled], p)
    assert close(ctx.g.data[0], g) and close(ctx.attention_weights.data[0], weights)


@check
def check_decoder_examples():
    rng = _rng(12)
    c_d = 4
    f = Tensor(rng.uniform(-1, 1, (1, c_d, 4, 4)))
    pyr = encoder.FeaturePyramid([f] * 5)
    p = {f"uca{i}.w": Tensor(np.eye(c_d).reshape(c_d, c_d, 1, 1)) for i in range(1, 6)}
    p.update({f"uca{i}.b": Tensor(np.zeros(c_d)) for i in range(1, 6)})
    assert all(close(u.data, np.maximum(f.data, 0)) for u in decoder.unify_channels(pyr, p))
    p.update({f"uca{i}.w": Tensor(np.zeros((c_d, c_d, 1, 1))) for i in range(1, 6)})
    p.update({f"uca{i}.b": Tensor(np.full(c_d, 0.7)) for i in range(1, 6)})
    assert all(close(u.data, 0.7) for u in decoder.unify_channels(pyr, p))
    dp = model.as_constants(decoder.init_params(rng, (3,) * 5, c_d))
    zeros = [Tensor(np.zeros((1, c_d, 2 ** (5 - i), 2 ** (5 - i)))) for i in range(1, 6)]
    assert all(close(d.data, 0.0) for d in decoder.decode(zeros, dp).stages)
    # one fusion step against upsample + add + conv oracles
    prev = rng.uniform(-1, 1, (1, c_d, 2, 2))
    lat = rng.uniform(-1, 1, (1, c_d, 4, 4))
    w, b = rng.uniform(-1, 1, (c_d, c_d, 3, 3)), rng.uniform(-1, 1, c_d)
    got = decoder.fuse(Tensor(prev), Tensor(lat), Tensor(w), Tensor(b)).data
    ref = np.maximum(oracles.conv2d(oracles.upsample_bilinear(prev, 2) + lat, w, b, pad=1), 0)
    assert close(got, ref)


@check
def check_head_examples():
    rng = _rng(13)
    c = 4
    p = model.as_constants(head.init_params(rng, c, c, c))
    zero_p = {k: Tensor(np.zeros(v.shape)) if k.endswith(".b") else v for k, v in p.items()}
    k5 = head.init_kernel(attention.GlobalContext(Tensor(np.zeros((1, c)))), zero_p)
    assert close(k5.k.data, 0.0)
    g = rng.uniform(-1, 1, c)
    k5 = head.init_kernel(attention.GlobalContext(Tensor(np.stack([g, g]))), p)
    assert close(k5.k.data[0], k5.k.data[1])
    assert close(k5.k.data[0], oracles.kernel_mlp(g, {k: v.data for k, v in p.items()}))
    d = rng.uniform(-1, 1, (1, c, 3, 3))
    zero_b = Tensor(np.zeros(1))
    assert close(head.predict(head.DynKernel(Tensor(np.zeros((1, c))), 1), Tensor(d), zero_b).logits.data, 0)
    onehot = np.eye(c)[2][None]
    assert close(head.predict(head.DynKernel(Tensor(onehot), 1), Tensor(d), zero_b).logits.data[0, 0], d[0, 2])
    kv = rng.uniform(-1, 1, c)
    assert close(head.predict(head.DynKernel(Tensor(kv[None]), 1), Tensor(d), Tensor([0.3])).logits.data[0, 0],
                 oracles.predict(kv, d[0], 0.3))


@check
def check_assemble_examples():
    rng = _rng(14)
    d = rng.uniform(-1, 1, (1, 3, 4, 4))
    sat = head.StagePrediction(Tensor(np.full((1, 1, 2, 2), 40.0)), 2)
    assert close(head.assemble(Tensor(d), sat).data, d.mean(axis=(2, 3)))
    off = head.StagePrediction(Tensor(np.full((1, 1, 2, 2), -40.0)), 2)
    assert close(head.assemble(Tensor(d), off).data, 0.0)
    prev = rng.uniform(-2, 2, (1, 1, 2, 2))
    got = head.assemble(Tensor(d), head.StagePrediction(Tensor(prev), 2)).data[0]
    assert close(got, oracles.assemble(d[0], prev[0, 0]))


@check
def check_update_kernel_examples():
    rng = _rng(15)
    c = 4
    p = model.as_constants(head.init_params(rng, c, c, c))
    a = Tensor(rng.uniform(-1, 1, (1, c)))
    kprev = head.DynKernel(Tensor(rng.uniform(-1, 1, (1, c))), 5)
    half = dict(p, **{"dk.gate.w": Tensor(np.zeros((c, c))), "dk.gate.b": Tensor(np.zeros(c))})
    feat = (a.data @ p["dk.split.w"].data + p["dk.split.b"].data)[:, :c]
    assert close(head.update_kernel(a, kprev, half, 4).k.data, 0.5 * feat + 0.5 * kprev.k.data)
    closed = dict(p, **{"dk.gate.b": Tensor(np.full(c, -30.0))})
    assert close(head.update_kernel(a, kprev, closed, 4).k.data, kprev.k.data, 1e-6)
    ref_k, _ = oracles.update_kernel(a.data[0], kprev.k.data[0], {k: v.data for k, v in p.items()})
    assert close(head.update_kernel(a, kprev, p, 4).k.data[0], ref_k)


@check
def check_run_head_examples():
    cfg = model.ModelConfig()
    params = model.init_params(cfg, 16)
    params["dk.gate.b"] = np.full_like(params["dk.gate.b"], -30.0)
    out = model.forward(Tensor(_rng(16).uniform(0, 1, (2, 3, 64, 64))), model.as_constants(params), cfg, trace=True)
    assert [pr.logits.shape for pr in out.preds] == [(2, 1, 2, 2), (2, 1, 4, 4), (2, 1, 8, 8),
                                                     (2, 1, 16, 16), (2, 1, 32, 32)]
    k5, k1 = out.trace.kernels[0].k.data, out.trace.kernels[-1].k.data
    assert np.abs(k1 - k5).max() < 1e-4


@check
def check_head_chain_oracle():
    rng = _rng(17)
    c, d_model = 3, 4
    p = head.init_params(rng, d_model, d_model, c)
    p["dk.pred.b"] = np.array([0.1])
    g = rng.uniform(-1, 1, (1, d_model))
    stages = [rng.uniform(-1, 1, (1, c, 2 ** (5 - i), 2 ** (5 - i))) for i in range(1, 6)]
    dec = decoder.DecoderFeatures([Tensor(s) for s in stages])
    preds = head.run_head(attention.GlobalContext(Tensor(g)), dec, model.as_constants(p))
    ref = oracles.run_head(g[0], [s[0] for s in stages], p)
    assert all(close(pr.logits.data[0, 0], r) for pr, r in zip(preds, ref))


# training pieces

@check
def check_loss_examples():
    t = (_rng(18).random((1, 1, 4, 4)) > 0.5).astype(float)
    assert close(losses.bce_loss(Tensor(np.zeros((1, 1, 4, 4))), t).data, math.log(2), 1e-6)
    assert losses.bce_loss(Tensor(np.full((1, 1, 2, 2), 30.0)), np.ones((1, 1, 2, 2))).item() < 1e-6
    z = np.array([[[[2.0, -1.0], [0.5, -3.0]]]])
    tz = np.array([[[[1.0, 0.0], [0.0, 1.0]]]])
    assert close(losses.bce_loss(Tensor(z), tz).data, oracles.bce(z, tz))
    sat = np.where(tz > 0, 30.0, -30.0)
    assert losses.dice_loss(Tensor(sat), tz).item() < 0.01
    assert losses.dice_loss(Tensor(np.full((1, 1, 2, 2), -200.0)), np.zeros((1, 1, 2, 2))).item() == 0.0
    assert close(losses.dice_loss(Tensor(z), tz).data, oracles.dice_loss(z, tz))
    pred = head.StagePrediction(Tensor(z), 1)
    single = losses.total_loss([pred], tz).item()
    assert close(single, losses.stage_loss(Tensor(z), tz).data)
    assert close(losses.total_loss([pred, pred, pred], tz).data, single)


@check
def check_sgd_examples():
    assert optim.poly_lr(4e-4, 0, 100) == 4e-4
    assert optim.poly_lr(4e-4, 100, 100) == 0.0
    p = {"x.w": np.array([1.0, -2.0], dtype=np.float32)}
    g = {"x.w": np.array([0.5, 0.25], dtype=np.float32)}
    state = optim.OptimState(total_steps=10, weight_decay=0.0)
    lr = optim.sgd_step(p, g, state, 0)
    assert lr == np.float32(4e-4)
    assert np.array_equal(p["x.w"], np.array([1.0, -2.0], dtype=np.float32) - np.float32(4e-4) * g["x.w"])


@check
def check_augment_examples():
    rng = _rng(19)
    img = rng.random((3, 8, 8)).astype(np.float32)
    mask = (rng.random((1, 8, 8)) > 0.5).astype(np.float32)
    a, m = augment(img, mask, rng, flip=False, rotate=False, crop=False)
    assert np.array_equal(a, img) and np.array_equal(m, mask)
    twice = img[:, :, ::-1][:, :, ::-1]
    assert np.array_equal(twice, img)
    # p=1 forces both flips; horizontal moves (r, c) to (r, W-1-c)
    a, m = augment(img, mask, rng, flip=True, rotate=False, crop=False, p=1.0)
    for r in range(8):
        for c in range(8):
            assert m[0, 7 - r, 7 - c] == mask[0, r, c]


# metrics

@check
def check_metric_examples():
    truth = np.zeros((4, 4), dtype=np.uint8)
    truth[0, :3] = 1
    rep = metrics.report(metrics.confusion(truth, truth))
    assert all(v == 1.0 for v in rep.as_tuple())
    pred = np.zeros((4, 4), dtype=np.uint8)
    pred[0, 0] = pred[1, 1] = 1
    truth = np.zeros((4, 4), dtype=np.uint8)
    truth[0, 0] = truth[2, 2] = 1
    rep = metrics.report(metrics.confusion(pred, truth))
    assert rep.dice == 0.5 and close(rep.iou_p, 1 / 3, 1e-12)
    assert np.array_equal(metrics.binarize(np.array([-1.0, 1.0, 0.0])), [0, 1, 0])
    c = metrics.confusion(pred, 1 - pred)
    assert c.tp == 0 and c.tn == 0


@check
def check_metric_oracle():
    rng = _rng(20)
    for _ in range(200):
        pred = rng.random((4, 4)) > rng.random()
        truth = rng.random((4, 4)) > rng.random()
        c = metrics.confusion(pred, truth)
        assert (c.tp, c.fp, c.tn, c.fn) == oracles.confusion(pred, truth)
        rep = metrics.report(c)
        ref = oracles.metrics_from_counts(c.tp, c.fp, c.tn, c.fn)
        assert all(getattr(rep, k) == v for k, v in ref.items())
        assert rep.miou == (rep.iou_p + rep.iou_b) / 2


# data io

@check
def check_pnm_examples():
    rng = _rng(21)
    raw = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "x.ppm"
        pnm.write_pnm_raw(raw, path)
        assert np.array_equal(pnm.read_pnm_raw(path), raw)
        pnm.write_pnm(pnm.load_pnm(path), Path(tmp) / "y.ppm")
        assert (Path(tmp) / "y.ppm").read_bytes() == path.read_bytes()
        pnm.write_pnm_raw(np.array([[127, 128]], dtype=np.uint8), Path(tmp) / "m.pgm")
        assert np.array_equal(pnm.load_pnm(Path(tmp) / "m.pgm").data, [[[0.0, 1.0]]])
    try:
        pnm.parse_pnm(b"P6\n4 x4\n255\n")
    except pnm.PNMError as exc:
        assert exc.offset == 5
    else:
        raise AssertionError("malformed header accepted")


@check
def check_resize_and_split():
    s = data.Sample(np.full((3, 4, 4), 0.3, dtype=np.float32), np.zeros((1, 4, 4), dtype=np.float32), "a")
    r = data.resize(s, 8)
    assert close(r.image, 0.3) and r.image.shape == (3, 8, 8)
    assert data.resize(s, 4) is s
    checker = (np.indices((4, 4)).sum(axis=0) % 2).astype(np.float32)[None]
    assert np.array_equal(data.resize_mask(checker, 8, 8), oracles.resize_nearest(checker, 8, 8))
    tr, va = data.split(list(range(10)), 0.8, seed=3)
    assert len(tr) == 8 and len(va) == 2 and sorted(tr + va) == list(range(10))
    assert data.split(list(range(10)), 0.8, seed=3) == (tr, va)


@check
def check_synthetic_examples():
    spec = data.SyntheticSpec(count=6, image_size=32, seed=5)
    with tempfile.TemporaryDirectory() as tmp:
        data.generate_synthetic(spec, Path(tmp) / "a")
        data.generate_synthetic(spec, Path(tmp) / "b")
        for sub in ("images", "masks"):
            for f in sorted((Path(tmp) / "a" / sub).iterdir()):
                assert f.read_bytes() == (Path(tmp) / "b" / sub / f.name).read_bytes()
        empty = data.SyntheticSpec(count=3, image_size=32, ellipses=(0, 0), seed=5)
        data.generate_synthetic(empty, Path(tmp) / "c")
        assert all(s.mask.sum() == 0 for s in data.load_dataset(Path(tmp) / "c"))


@check
def check_checkpoint_roundtrip():
    params = model.init_params(model.ModelConfig(channels=(4, 4, 8, 8, 8), d_model=8, c_d=4), 22)
    back = checkpoint.loads(checkpoint.dumps(params))
    assert list(back) == list(params)
    assert all(np.array_equal(back[k], params[k]) for k in params)
    assert model.config_from_params(back) == model.ModelConfig(channels=(4, 4, 8, 8, 8), d_model=8, c_d=4)


def run(names=None, out=print) -> int:
    """Run checks, printing one PASS/FAIL line each; returns the failure count."""
    failures = 0
    for name, fn in CHECKS.items():
        if names and name not in names:
            continue
        t0 = time.perf_counter()
        try:
            fn()
        except Exception:  # noqa: BLE001
            failures += 1
            out(f"FAIL {name}")
            out(traceback.format_exc().rstrip())
        else:
            out(f"PASS {name} ({time.perf_counter() - t0:.2f}s)")
    out(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed" if not names else f"{failures} failures")
    return failures
