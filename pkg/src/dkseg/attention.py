"""Encoder Attention: self-attention across pooled encoder stages.

Each stage map is average-pooled to a vector, projected to a shared token
width, and the five tokens attend to one another with single-head scaled
dot-product attention. The global context is the mean attended token.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import init
from .autodiff import Tensor
from .encoder import FeaturePyramid


@dataclass
class GlobalContext:
    g: Tensor
    attention_weights: Tensor | None = None


def init_params(rng: np.random.Generator, stage_channels, d_model: int) -> dict:
    p: dict[str, np.ndarray] = {}
    for i, c in enumerate(stage_channels, start=1):
        init.dense(p, rng, f"ea.proj{i}", c, d_model)
    for name in ("q", "k", "v"):
        p[f"ea.{name}.w"] = init.kaiming_uniform(rng, (d_model, d_model), d_model)
    return p


def pool_stages(pyramid: FeaturePyramid) -> list[Tensor]:
    return [ad.global_avg_pool(f) for f in pyramid.stages]


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """``softmax(q kᵀ / sqrt(d_k)) v`` over the last two axes; returns (output, weights)."""
    dk = q.shape[-1]
    scores = ad.scale(ad.matmul(q, ad.swap_last(k)), 1.0 / math.sqrt(dk))
    weights = ad.softmax(scores, axis=-1)
    return ad.matmul(weights, v), weights


def encoder_attention(pooled: list[Tensor], p: dict) -> GlobalContext:
    if len(pooled) != 5:
        raise ValueError(f"expected 5 pooled stage vectors, got {len(pooled)}")
    tokens = []
    for i, vec in enumerate(pooled, start=1):
        w = p[f"ea.proj{i}.w"]
        if vec.ndim != 2 or vec.shape[1] != w.shape[0]:
            raise ValueError(f"stage {i} vector has shape {vec.shape}, projection expects {w.shape[0]}")
        tokens.append(ad.linear(vec, w, p[f"ea.proj{i}.b"]))
    t = ad.stack(tokens, axis=1)  # [N, 5, d]
    q = ad.matmul(t, p["ea.q.w"])
    k = ad.matmul(t, p["ea.k.w"])
    v = ad.matmul(t, p["ea.v.w"])
    attended, weights = scaled_dot_product_attention(q, k, v)
    return GlobalContext(ad.mean(attended, axis=1), weights)


def deepest_stage_context(pyramid: FeaturePyramid) -> GlobalContext:
    """Ablation context: pooled F5 alone, no attention."""
    return GlobalContext(ad.global_avg_pool(pyramid[5]))
