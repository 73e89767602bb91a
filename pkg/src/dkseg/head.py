"""Dynamic kernel segmentation head.

A per-sample 1x1 kernel is generated from the global context, applied to
the deepest decoder map, then refined once per decoder stage: decoder
features are pooled under the previous prediction's foreground
probability, split into a candidate kernel and a gate input, and the
kernel moves toward the candidate by a sigmoid gate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import init
from .attention import GlobalContext
from .autodiff import Tensor
from .decoder import DecoderFeatures


@dataclass
class DynKernel:
    k: Tensor  # [N, C_d]
    stage: int


@dataclass
class StagePrediction:
    logits: Tensor  # [N, 1, H, W]
    stage: int


@dataclass
class HeadTrace:
    """Per-stage kernels and gates, kept for diagnostics."""
    kernels: list[DynKernel] = field(default_factory=list)
    gates: list[tuple[int, Tensor]] = field(default_factory=list)


def init_params(rng: np.random.Generator, context_dim: int, d_model: int, c_d: int) -> dict:
    p: dict[str, np.ndarray] = {}
    init.dense(p, rng, "dk.phi1", context_dim, d_model)
    init.dense(p, rng, "dk.phi2", d_model, c_d)
    init.dense(p, rng, "dk.split", c_d, 2 * c_d)
    init.dense(p, rng, "dk.gate", c_d, c_d)
    p["dk.pred.b"] = np.zeros(1, dtype=np.float32)
    return p


def init_kernel(ctx: GlobalContext, p: dict) -> DynKernel:
    h = ad.relu(ad.linear(ctx.g, p["dk.phi1.w"], p["dk.phi1.b"]))
    return DynKernel(ad.linear(h, p["dk.phi2.w"], p["dk.phi2.b"]), stage=5)


def predict(kernel: DynKernel, d: Tensor, bias: Tensor) -> StagePrediction:
    n, c = kernel.k.shape
    if d.shape[:2] != (n, c):
        raise ValueError(f"kernel {kernel.k.shape} does not match features {d.shape}")
    k = ad.reshape(kernel.k, (n, c, 1, 1))
    logits = ad.sum(ad.mul(k, d), axis=1, keepdims=True)
    return StagePrediction(ad.add(logits, bias), kernel.stage)


def assemble(d: Tensor, prev: StagePrediction) -> Tensor:
    """Foreground-weighted spatial mean of ``d`` under the upsampled previous prediction."""
    h, w = d.shape[2:]
    ph, pw = prev.logits.shape[2:]
    if (2 * ph, 2 * pw) != (h, w):
        raise ValueError(f"previous prediction {ph}x{pw} is not half of {h}x{w}")
    mask = ad.sigmoid(ad.upsample_bilinear(prev.logits, 2))
    return ad.mean(ad.mul(d, mask), axis=(2, 3))


def update_kernel(a: Tensor, prev: DynKernel, p: dict, stage: int,
                  trace: HeadTrace | None = None) -> DynKernel:
    if a.shape != prev.k.shape:
        raise ValueError(f"aggregate {a.shape} does not match kernel {prev.k.shape}")
    a_feat, a_gate = ad.split(ad.linear(a, p["dk.split.w"], p["dk.split.b"]), 2, axis=-1)
    g = ad.sigmoid(ad.linear(ad.mul(a_gate, prev.k), p["dk.gate.w"], p["dk.gate.b"]))
    if trace is not None:
        trace.gates.append((stage, g))
    # K_prev + g*(A_feat - K_prev): the same convex blend, but rounding cannot
    # move K off K_prev when A_feat == K_prev, and it stays inside the bounds
    k = ad.add(prev.k, ad.mul(g, ad.sub(a_feat, prev.k)))
    return DynKernel(k, stage)


def run_head(ctx: GlobalContext, dec: DecoderFeatures, p: dict,
             trace: HeadTrace | None = None) -> list[StagePrediction]:
    """Predictions ordered P5, P4, ..., P1; the last one is the primary output."""
    kernel = init_kernel(ctx, p)
    bias = p["dk.pred.b"]
    preds = [predict(kernel, dec[5], bias)]
    if trace is not None:
        trace.kernels.append(kernel)
    for i in range(4, 0, -1):
        a = assemble(dec[i], preds[-1])
        kernel = update_kernel(a, kernel, p, i, trace)
        preds.append(predict(kernel, dec[i], bias))
        if trace is not None:
            trace.kernels.append(kernel)
    return preds
