from __future__ import annotations

from typing import Sequence

from . import autodiff as ad
from .autodiff import Tensor
from .head import StagePrediction

DICE_EPS = 1.0


def bce_loss(logits: Tensor, target) -> Tensor:
    """Mean binary cross-entropy over all pixels, from logits."""
    return ad.mean(ad.bce_with_logits(logits, target))


def dice_loss(logits: Tensor, target, eps: float = DICE_EPS) -> Tensor:
    """Soft Dice loss per sample, averaged over the batch."""
    t = target if isinstance(target, Tensor) else Tensor(target)
    if logits.shape != t.shape:
        raise ValueError(f"logits {logits.shape} and target {t.shape} differ")
    p = ad.sigmoid(logits)
    axes = tuple(range(1, logits.ndim))
    inter = ad.sum(ad.mul(p, t), axis=axes)
    denom = ad.add(ad.sum(p, axis=axes), ad.sum(t, axis=axes))
    ratio = ad.div(ad.add(ad.scale(inter, 2.0), eps), ad.add(denom, eps))
    return ad.sub(1.0, ad.mean(ratio))


def stage_loss(logits: Tensor, target) -> Tensor:
    return ad.add(bce_loss(logits, target), dice_loss(logits, target))


def total_loss(preds: Sequence[StagePrediction], target) -> Tensor:
    """BCE + Dice on every stage prediction (upsampled to the target), averaged over stages."""
    t = target if isinstance(target, Tensor) else Tensor(target)
    th, tw = t.shape[2:]
    losses = []
    for pred in preds:
        z = pred.logits
        if z.shape[2:] != (th, tw):
            z = ad.resize_bilinear(z, th, tw)
        losses.append(stage_loss(z, t))
    return ad.scale(sum_tensors(losses), 1.0 / len(losses))


def sum_tensors(xs: Sequence[Tensor]) -> Tensor:
    acc = xs[0]
    for x in xs[1:]:
        acc = ad.add(acc, x)
    return acc
