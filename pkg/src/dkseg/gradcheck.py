"""Central finite-difference checks of tape gradients, op by op and end to end.

Runs in float64 storage so that ``eps = 1e-3`` differences are not swamped
by rounding. The error of one check is the largest absolute deviation over
all compared entries, divided by the largest gradient magnitude among them.

Whole networks are piecewise smooth: with thousands of relus, almost any
``eps`` perturbation of an early weight moves some pre-activation across
zero, and the central difference then mixes two pieces. For those checks
(``freeze_relu=True``) the perturbed evaluations replay the relu masks of
the unperturbed point, so the difference is taken on the smooth piece that
contains it, whose derivative is the true derivative there. Op-level relu
checks do not freeze; their inputs are kept away from zero instead.
"""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import attention, head, losses, model
from . import autodiff as ad
from .autodiff import Tensor

EPS = 1e-3
TOLERANCE = 1e-2


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check(fn: Callable[..., Tensor], inputs: dict[str, np.ndarray], rng: np.random.Generator,
          eps: float = EPS, max_entries: int | None = None, freeze_relu: bool = False) -> float:
    """Compare tape and finite-difference gradients of ``sum(fn(**inputs) * R)``.

    ``R`` is a fixed random projection so every output element contributes.
    With ``max_entries`` only that many randomly chosen entries per input are
    perturbed.
    """
    with ad.precision(np.float64):
        arrays = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
        out = fn(**{k: Tensor(v) for k, v in arrays.items()})
        proj = rng.uniform(-1, 1, size=out.shape)

        with ad.record_relu_patterns() as base_masks:
            fn(**{k: Tensor(v) for k, v in arrays.items()})

        def objective() -> float:
            if freeze_relu:
                with ad.replay_relu_patterns(base_masks):
                    y = fn(**{k: Tensor(v) for k, v in arrays.items()})
            else:
                y = fn(**{k: Tensor(v) for k, v in arrays.items()})
            return float(np.sum(y.data * proj))

        with ad.Tape() as tape:
            ts = {k: tape.watch(k, v) for k, v in arrays.items()}
            loss = ad.sum(ad.mul(fn(**ts), Tensor(proj)))
        grads = tape.backward(loss)

        analytic, numeric = [], []
        for name, arr in arrays.items():
            flat = arr.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            g = grads[name].reshape(-1)
            for i in idx:
                orig = flat[i]
                flat[i] = orig + eps
                up = objective()
                flat[i] = orig - eps
                down = objective()
                flat[i] = orig
                numeric.append((up - down) / (2 * eps))
                analytic.append(g[i])
    return relative_error(np.array(analytic), np.array(numeric))


def _u(rng, *shape, low=-1.0, high=1.0):
    return rng.uniform(low, high, size=shape)


def _away_from_zero(x: np.ndarray, margin: float = 0.05) -> np.ndarray:
    # keep relu/threshold inputs clear of the kink
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def op_cases(rng: np.random.Generator) -> list[tuple[str, Callable, dict]]:
    cases = [
        ("add_broadcast", lambda a, b: ad.add(a, b), {"a": _u(rng, 2, 3, 4), "b": _u(rng, 3, 1)}),
        ("sub", lambda a, b: ad.sub(a, b), {"a": _u(rng, 3, 4), "b": _u(rng, 3, 4)}),
        ("mul_broadcast", lambda a, b: ad.mul(a, b), {"a": _u(rng, 2, 1, 3, 3), "b": _u(rng, 2, 4, 3, 3)}),
        ("div", lambda a, b: ad.div(a, b), {"a": _u(rng, 3, 4), "b": _u(rng, 3, 4, low=0.5, high=1.5)}),
        ("scale", lambda x: ad.scale(x, -2.5), {"x": _u(rng, 5)}),
        ("relu", lambda x: ad.relu(x), {"x": _away_from_zero(_u(rng, 4, 5))}),
        ("sigmoid", lambda x: ad.sigmoid(x), {"x": _u(rng, 4, 5, low=-3, high=3)}),
        ("sum_axis", lambda x: ad.sum(x, axis=(1, 2)), {"x": _u(rng, 2, 3, 4)}),
        ("mean_keepdims", lambda x: ad.mean(x, axis=1, keepdims=True), {"x": _u(rng, 2, 3, 4)}),
        ("reshape", lambda x: ad.reshape(x, (6, 2)), {"x": _u(rng, 3, 4)}),
        ("transpose", lambda x: ad.transpose(x, (2, 0, 1)), {"x": _u(rng, 2, 3, 4)}),
        ("stack", lambda a, b: ad.stack([a, b], axis=1), {"a": _u(rng, 2, 3), "b": _u(rng, 2, 3)}),
        ("split", lambda x: ad.mul(*ad.split(x, 2, axis=-1)), {"x": _u(rng, 3, 8)}),
        ("matmul", lambda a, b: ad.matmul(a, b), {"a": _u(rng, 3, 4), "b": _u(rng, 4, 2)}),
        ("matmul_batched", lambda a, b: ad.matmul(a, b), {"a": _u(rng, 2, 5, 4), "b": _u(rng, 4, 3)}),
        ("linear", lambda x, w, b: ad.linear(x, w, b), {"x": _u(rng, 3, 4), "w": _u(rng, 4, 5), "b": _u(rng, 5)}),
        ("softmax_rows", lambda x: ad.softmax_rows(x), {"x": _u(rng, 3, 5, low=-2, high=2)}),
        ("conv2d_3x3", lambda x, w, b: ad.conv2d(x, w, b, stride=1, pad=1),
         {"x": _u(rng, 2, 3, 5, 5), "w": _u(rng, 4, 3, 3, 3), "b": _u(rng, 4)}),
        ("conv2d_stride2", lambda x, w, b: ad.conv2d(x, w, b, stride=2, pad=1),
         {"x": _u(rng, 1, 2, 6, 6), "w": _u(rng, 3, 2, 3, 3), "b": _u(rng, 3)}),
        ("conv2d_1x1", lambda x, w, b: ad.conv2d(x, w, b),
         {"x": _u(rng, 2, 3, 4, 4), "w": _u(rng, 5, 3, 1, 1), "b": _u(rng, 5)}),
        ("global_avg_pool", lambda x: ad.global_avg_pool(x), {"x": _u(rng, 2, 3, 4, 5)}),
        ("upsample_bilinear", lambda x: ad.upsample_bilinear(x, 2), {"x": _u(rng, 1, 2, 3, 4)}),
        ("resize_bilinear", lambda x: ad.resize_bilinear(x, 8, 8), {"x": _u(rng, 1, 1, 2, 2)}),
        ("bce_with_logits", lambda z: ad.bce_with_logits(z, np.array([[0.0, 1.0], [1.0, 0.0]])),
         {"z": _u(rng, 2, 2, low=-3, high=3)}),
    ]
    return cases


def module_cases(rng: np.random.Generator) -> list[tuple[str, Callable, dict]]:
    c, d = 4, 6
    target = (rng.random((2, 1, 8, 8)) > 0.5).astype(np.float64)
    ea_params = {f"ea.proj{i}.w": _u(rng, ch, d) for i, ch in enumerate((2, 3, 3, 4, 5), start=1)}
    ea_params.update({f"ea.proj{i}.b": _u(rng, d) for i in range(1, 6)})
    ea_params.update({f"ea.{k}.w": _u(rng, d, d) for k in "qkv"})
    pooled = {f"s{i}": _u(rng, 2, ch) for i, ch in enumerate((2, 3, 3, 4, 5), start=1)}

    def ea(**kw):
        pooled_list = [kw[f"s{i}"] for i in range(1, 6)]
        return attention.encoder_attention(pooled_list, kw).g

    def init_kernel(g, **kw):
        return head.init_kernel(attention.GlobalContext(g), kw).k

    def assemble(dm, prev):
        return head.assemble(dm, head.StagePrediction(prev, 2))

    def update(a, k, **kw):
        return head.update_kernel(a, head.DynKernel(k, 5), kw, 4).k

    def predict(k, dm, b):
        return head.predict(head.DynKernel(k, 1), dm, b).logits

    def total(p5, p1):
        preds = [head.StagePrediction(p5, 5), head.StagePrediction(p1, 1)]
        return losses.total_loss(preds, target)

    return [
        ("encoder_attention", ea, {**pooled, **ea_params}),
        ("init_kernel", init_kernel, {"g": _u(rng, 2, d), "dk.phi1.w": _u(rng, d, d), "dk.phi1.b": _u(rng, d),
                                      "dk.phi2.w": _u(rng, d, c), "dk.phi2.b": _u(rng, c)}),
        ("assemble", assemble, {"dm": _u(rng, 2, c, 4, 4), "prev": _u(rng, 2, 1, 2, 2, low=-2, high=2)}),
        ("update_kernel", update, {"a": _u(rng, 2, c), "k": _u(rng, 2, c),
                                   "dk.split.w": _u(rng, c, 2 * c), "dk.split.b": _u(rng, 2 * c),
                                   "dk.gate.w": _u(rng, c, c), "dk.gate.b": _u(rng, c)}),
        ("predict", predict, {"k": _u(rng, 2, c), "dm": _u(rng, 2, c, 3, 3), "b": _u(rng, 1)}),
        ("bce_loss", lambda z: losses.bce_loss(z, target), {"z": _u(rng, 2, 1, 8, 8, low=-3, high=3)}),
        ("dice_loss", lambda z: losses.dice_loss(z, target), {"z": _u(rng, 2, 1, 8, 8, low=-3, high=3)}),
        ("total_loss", total, {"p5": _u(rng, 2, 1, 2, 2), "p1": _u(rng, 2, 1, 4, 4)}),
    ]


def end_to_end_check(rng: np.random.Generator, size: int = 32, per_tensor: int = 2) -> float:
    """Total loss of the full model on one ``size``x``size`` image, w.r.t. sampled parameter entries."""
    cfg = model.ModelConfig()
    params = {k: v.astype(np.float64) for k, v in model.init_params(cfg, rng).items()}
    image = rng.uniform(0, 1, size=(1, 3, size, size))
    target = (rng.random((1, 1, size, size)) > 0.6).astype(np.float64)

    def fn(**p):
        return losses.total_loss(model.forward(Tensor(image), p, cfg).preds, target)

    return check(fn, params, rng, max_entries=per_tensor, freeze_relu=True)


def run(seed: int = 0, include_model: bool = True) -> list[tuple[str, float, float]]:
    """Returns (name, max relative error, seconds) per check."""
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, inputs in op_cases(rng) + module_cases(rng):
        t0 = time.perf_counter()
        err = check(fn, inputs, rng)
        results.append((name, err, time.perf_counter() - t0))
    if include_model:
        t0 = time.perf_counter()
        results.append(("model_end_to_end_32x32", end_to_end_check(rng), time.perf_counter() - t0))
    return results
