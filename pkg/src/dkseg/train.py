"""Augmentation, evaluation and the training loop."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .config import TrainConfig, format_config
from .data import Sample, resize_image, resize_mask, split
from .inference import evaluate
from .losses import total_loss
from .model import forward, init_params
from .optim import OptimState, sgd_step

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "lr", "train_loss", "val_dice")


def augment(image: np.ndarray, mask: np.ndarray, rng: np.random.Generator, *,
            flip: bool = True, rotate: bool = True, crop: bool = True,
            p: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Apply the same random geometric transform to ``image`` [C,H,W] and ``mask`` [1,H,W]."""
    if flip and rng.random() < p:
        image, mask = image[:, :, ::-1], mask[:, :, ::-1]
    if flip and rng.random() < p:
        image, mask = image[:, ::-1, :], mask[:, ::-1, :]
    if rotate and rng.random() < p:
        square = image.shape[1] == image.shape[2]
        k = int(rng.integers(1, 4)) if square else 2
        image, mask = np.rot90(image, k, axes=(1, 2)), np.rot90(mask, k, axes=(1, 2))
    if crop and rng.random() < p:
        h, w = image.shape[1:]
        ch = int(rng.integers(math.ceil(0.8 * h), h + 1))
        cw = int(rng.integers(math.ceil(0.8 * w), w + 1))
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        image = resize_image(image[:, top:top + ch, left:left + cw], h, w)
        mask = resize_mask(mask[:, top:top + ch, left:left + cw], h, w)
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


@dataclass
class TrainResult:
    best_params: dict[str, np.ndarray]
    best_val_dice: float
    history: list[dict] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)
    seconds: float = 0.0


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def initial_params(cfg: TrainConfig) -> dict[str, np.ndarray]:
    """The parameters ``train`` starts from for this config (a 0-step model)."""
    return init_params(cfg.model, _rng(cfg.seed, 0))


def train(cfg: TrainConfig, samples: Sequence[Sample], out_dir: str | Path | None = None) -> TrainResult:
    """Train from scratch; writes ``checkpoint.dksg``, ``metrics.csv`` and
    ``config.txt`` under ``out_dir`` when given."""
    if not samples:
        raise ValueError("dataset is empty")
    for s in samples:
        if s.image.shape[1:] != (cfg.image_size, cfg.image_size):
            raise ValueError(f"sample {s.id} has size {s.image.shape[1:]}, expected {cfg.image_size}")
    train_set, val_set = split(list(samples), cfg.train_frac, cfg.seed)
    if not train_set or not val_set:
        raise ValueError("need at least one training and one validation sample")
    mcfg = cfg.model
    params = initial_params(cfg)
    shuffle_rng, aug_rng = _rng(cfg.seed, 1), _rng(cfg.seed, 2)
    steps_per_epoch = math.ceil(len(train_set) / cfg.batch_size)
    state = OptimState(total_steps=cfg.epochs * steps_per_epoch, lr0=cfg.lr0, momentum=cfg.momentum,
                       weight_decay=cfg.weight_decay, poly_power=cfg.poly_power)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(format_config(cfg), encoding="utf-8")
    result = TrainResult({k: v.copy() for k, v in params.items()}, -1.0)
    t0 = time.perf_counter()
    step = 0
    lr = state.lr(0)
    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            pairs = [augment(train_set[i].image, train_set[i].mask, aug_rng, flip=cfg.augment_flip,
                             rotate=cfg.augment_rotate, crop=cfg.augment_crop) for i in idx]
            x = np.stack([p[0] for p in pairs])
            y = np.stack([p[1] for p in pairs])
            with ad.Tape() as tape:
                p = tape.watch_all(params)
                loss = total_loss(forward(ad.Tensor(x), p, mcfg).preds, y)
            grads = tape.backward(loss)
            lr = sgd_step(params, grads, state, step)
            losses.append(loss.item())
            result.step_losses.append(losses[-1])
            step += 1
        _, summary = evaluate(params, mcfg, val_set)
        row = {"epoch": epoch, "step": step, "lr": lr,
               "train_loss": float(np.mean(losses)), "val_dice": summary.dice}
        result.history.append(row)
        log.info("epoch %d step %d lr %.3g loss %.4f val_dice %.4f",
                 epoch, step, lr, row["train_loss"], row["val_dice"])
        if summary.dice > result.best_val_dice:
            result.best_val_dice = summary.dice
            result.best_params = {k: v.copy() for k, v in params.items()}
            if out is not None:
                checkpoint.save(out / "checkpoint.dksg", result.best_params)
        if out is not None:
            write_log(out / "metrics.csv", result.history)
    result.seconds = time.perf_counter() - t0
    return result


def write_log(path: str | Path, history: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for row in history:
            w.writerow([row["epoch"], row["step"], f"{row['lr']:.9g}",
                        f"{row['train_loss']:.6f}", f"{row['val_dice']:.6f}"])


def read_log(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"epoch": int(r["epoch"]), "step": int(r["step"]), "lr": float(r["lr"]),
                 "train_loss": float(r["train_loss"]), "val_dice": float(r["val_dice"])}
                for r in csv.DictReader(fh)]
