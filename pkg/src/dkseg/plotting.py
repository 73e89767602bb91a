"""Figures written next to the CSV outputs of ``train``, ``eval`` and ``predict``."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import COLUMNS, HEADERS, MetricReport  # noqa: E402

# no version/date metadata, so identical inputs give identical files
_PNG_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def training_curves(history: Sequence[dict], path: str | Path) -> Path:
    epochs = [r["epoch"] for r in history]
    fig, (ax_loss, ax_dice) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, [r["train_loss"] for r in history], "o-", color="tab:blue", ms=3)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss (BCE + Dice)")
    ax_dice.plot(epochs, [r["val_dice"] for r in history], "o-", color="tab:red", ms=3)
    ax_dice.set_xlabel("epoch")
    ax_dice.set_ylabel("validation Dice")
    ax_dice.set_ylim(0, 1)
    for ax in (ax_loss, ax_dice):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def metric_bars(summary: MetricReport, path: str | Path, title: str = "") -> Path:
    values = [100.0 * getattr(summary, c) for c in COLUMNS]
    fig, ax = plt.subplots(figsize=(7, 3.2))
    bars = ax.bar(HEADERS, values, color="tab:purple")
    for bar, v in zip(bars, values):
        ax.text(bar.get_x() + bar.get_width() / 2, v + 1, f"{v:.1f}", ha="center", fontsize=8)
    ax.set_ylim(0, 110)
    ax.set_ylabel("%")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return _save(fig, path)


def prediction_overlay(image: np.ndarray, mask: np.ndarray, path: str | Path) -> Path:
    """``image`` [3,H,W] in [0,1] with the predicted mask [H,W] contoured on top."""
    fig, ax = plt.subplots(figsize=(3.2, 3.2))
    ax.imshow(np.clip(image.transpose(1, 2, 0), 0, 1))
    if mask.any() and not mask.all():
        ax.contour(mask.astype(float), levels=[0.5], colors="cyan", linewidths=1)
    ax.set_axis_off()
    fig.tight_layout(pad=0.1)
    return _save(fig, path)
