"""Prediction at native resolution and dataset evaluation."""

from __future__ import annotations

from itertools import groupby
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import metrics
from .data import Sample, resize_image
from .head import HeadTrace
from .model import ModelConfig, ModelOutput, as_constants, forward


def model_size(n: int) -> int:
    """Nearest multiple of 32 (at least 32) for an input side of ``n`` pixels."""
    return max(32, int(round(n / 32)) * 32)


def run_model(images: np.ndarray, params: dict, cfg: ModelConfig, trace: bool = False) -> ModelOutput:
    return forward(ad.Tensor(images), as_constants(params), cfg, trace=trace)


def predict_logits(params: dict, cfg: ModelConfig, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Logits [N,1,H,W] at the input resolution for images of any size.

    The finest head output sits at half resolution; it is bilinearly
    upsampled, and if the input was resized to a multiple of 32 the logits
    are resized back.
    """
    n, _, h, w = images.shape
    mh, mw = model_size(h), model_size(w)
    if (mh, mw) != (h, w):
        images = np.stack([resize_image(im, mh, mw) for im in images])
    outs = []
    for i in range(0, n, batch_size):
        out = run_model(images[i:i + batch_size], params, cfg)
        outs.append(ad.upsample_bilinear(out.logits, 2).data)
    logits = np.concatenate(outs)
    if (mh, mw) != (h, w):
        logits = ad.resize_bilinear(ad.Tensor(logits), h, w).data
    return logits


def evaluate(params: dict, cfg: ModelConfig, samples: Sequence[Sample], pooled: bool = False,
             batch_size: int = 16):
    """Per-image metric reports (sorted by id) and the dataset summary."""
    pairs = []
    for _, group in groupby(samples, key=lambda s: s.image.shape):
        group = list(group)
        images = np.stack([s.image for s in group])
        logits = predict_logits(params, cfg, images, batch_size)
        pairs += [(s.id, metrics.confusion(metrics.binarize(z), s.mask)) for s, z in zip(group, logits)]
    return metrics.aggregate(pairs, pooled=pooled)


def attention_rows(out: ModelOutput) -> list[list]:
    """CSV rows ``sample, query_stage, key_stage, weight``."""
    w = out.context.attention_weights
    if w is None:
        return []
    rows = []
    for n in range(w.shape[0]):
        for q in range(w.shape[1]):
            for k in range(w.shape[2]):
                rows.append([n, q + 1, k + 1, f"{float(w.data[n, q, k]):.8f}"])
    return rows


def kernel_rows(trace: HeadTrace) -> list[list]:
    """CSV rows ``stage, mean_gate, l2_kernel`` (batch-averaged); stage 5 has no gate."""
    gates = {stage: float(g.data.mean()) for stage, g in trace.gates}
    rows = []
    for k in trace.kernels:
        l2 = float(np.linalg.norm(k.k.data.astype(np.float64), axis=1).mean())
        gate = gates.get(k.stage)
        rows.append([k.stage, "" if gate is None else f"{gate:.8f}", f"{l2:.8f}"])
    return rows
