"""Datasets on disk, resizing, splitting and the synthetic polyp generator.

Layout of a dataset root::

    <root>/images/<id>.ppm
    <root>/masks/<id>.pgm
    <root>/ellipses.csv        (synthetic sets only)
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from . import pnm
from .autodiff import resample

log = logging.getLogger(__name__)


@dataclass
class Sample:
    image: np.ndarray  # [3,H,W] float32 in [0,1]
    mask: np.ndarray  # [1,H,W] float32 in {0,1}
    id: str

    def __post_init__(self):
        if self.image.shape[1:] != self.mask.shape[1:]:
            raise ValueError(f"{self.id}: image {self.image.shape} and mask {self.mask.shape} differ")


@dataclass(frozen=True)
class SyntheticSpec:
    count: int = 500
    image_size: int = 64
    ellipses: tuple[int, int] = (1, 3)
    axis_range: tuple[float, float] = (0.08, 0.3)
    fg_noise: float = 0.06
    bg_noise: float = 0.08
    seed: int = 0


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    a: float
    b: float
    theta: float

    def radius(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Normalised radius; <= 1 inside. Pixel (r, c) sits at x=c, y=r."""
        dx, dy = cols - self.cx, rows - self.cy
        ct, st = math.cos(self.theta), math.sin(self.theta)
        u = (dx * ct + dy * st) / self.a
        v = (-dx * st + dy * ct) / self.b
        return np.sqrt(u * u + v * v)

    def contains(self, row: float, col: float) -> bool:
        return float(self.radius(np.asarray(row, float), np.asarray(col, float))) <= 1.0


# resizing

def resize_image(image: np.ndarray, h: int, w: int) -> np.ndarray:
    return resample(image.astype(np.float64), h, w).astype(np.float32)


def nearest_index(n_in: int, n_out: int) -> np.ndarray:
    return np.minimum(((np.arange(n_out) + 0.5) * n_in / n_out).astype(int), n_in - 1)


def resize_mask(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    return mask[..., nearest_index(mask.shape[-2], h)[:, None], nearest_index(mask.shape[-1], w)[None, :]]


def resize(sample: Sample, size: int | tuple[int, int]) -> Sample:
    h, w = (size, size) if isinstance(size, int) else size
    if sample.image.shape[1:] == (h, w):
        return sample
    return Sample(resize_image(sample.image, h, w), resize_mask(sample.mask, h, w), sample.id)


# splitting

def split(items: Sequence, train_frac: float = 0.8, seed: int = 0) -> tuple[list, list]:
    if not 0.0 < train_frac < 1.0:
        raise ValueError("train_frac must be in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(items))
    n_train = int(round(train_frac * len(items)))
    return [items[i] for i in order[:n_train]], [items[i] for i in order[n_train:]]


# loading

def dataset_ids(root: str | Path) -> list[str]:
    root = Path(root)
    images = root / "images"
    if not images.is_dir():
        raise FileNotFoundError(f"{images} does not exist")
    return sorted(p.stem for p in images.glob("*.ppm"))


def load_sample(root: str | Path, sid: str) -> Sample:
    root = Path(root)
    image = pnm.load_pnm(root / "images" / f"{sid}.ppm").data
    mask_path = root / "masks" / f"{sid}.pgm"
    if not mask_path.exists():
        raise FileNotFoundError(f"missing mask for {sid}: {mask_path}")
    mask = pnm.load_pnm(mask_path).data
    return Sample(image, mask, sid)


def load_dataset(root: str | Path, size: int | None = None) -> list[Sample]:
    ids = dataset_ids(root)
    if not ids:
        raise ValueError(f"dataset at {root} is empty")
    samples = [load_sample(root, i) for i in ids]
    return [resize(s, size) for s in samples] if size else samples


def batch_arrays(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    return (np.stack([s.image for s in samples]).astype(np.float32),
            np.stack([s.mask for s in samples]).astype(np.float32))


# synthetic data

_BG = np.array([0.42, 0.20, 0.16])
_FG = np.array([0.88, 0.52, 0.55])


def _texture(rng: np.random.Generator, size: int, amplitude: float, sigma: float) -> np.ndarray:
    noise = gaussian_filter(rng.standard_normal((3, size, size)), sigma=(0, sigma, sigma))
    noise /= noise.std() + 1e-12
    return amplitude * noise


def synth_sample(rng: np.random.Generator, spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray, list[Ellipse]]:
    """One image (uint8 [H,W,3]), mask (uint8 [H,W], 0/255) and its ellipses."""
    s = spec.image_size
    lo, hi = spec.ellipses
    n = int(rng.integers(lo, hi + 1)) if hi > 0 else 0
    rows, cols = np.mgrid[0:s, 0:s].astype(np.float64)
    ells = []
    alpha = np.zeros((s, s))
    mask = np.zeros((s, s), dtype=bool)
    for _ in range(n):
        e = Ellipse(cx=rng.uniform(0.2, 0.8) * (s - 1), cy=rng.uniform(0.2, 0.8) * (s - 1),
                    a=rng.uniform(*spec.axis_range) * s, b=rng.uniform(*spec.axis_range) * s,
                    theta=rng.uniform(0.0, math.pi))
        r = e.radius(rows, cols)
        inside = r <= 1.0
        # soft edge about one pixel wide, alpha >= 0.5 exactly on the interior
        edge = (1.0 - r) * min(e.a, e.b)
        alpha = np.maximum(alpha, 1.0 / (1.0 + np.exp(-2.5 * edge)))
        mask |= inside
        ells.append(e)
    shade = 1.0 + 0.15 * rng.uniform(-1, 1)
    bg = _BG[:, None, None] * shade + _texture(rng, s, spec.bg_noise, 2.0)
    fg = _FG[:, None, None] * shade + _texture(rng, s, spec.fg_noise, 1.0)
    img = (1.0 - alpha) * bg + alpha * fg
    img = gaussian_filter(img, sigma=(0, 0.6, 0.6))
    img8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    return img8, np.where(mask, 255, 0).astype(np.uint8), ells


def generate_synthetic(spec: SyntheticSpec, out: str | Path) -> dict:
    """Write ``spec.count`` samples under ``out``; returns summary statistics."""
    if spec.count < 1:
        raise ValueError("count must be >= 1")
    out = Path(out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    width = max(5, len(str(spec.count - 1)))
    fractions = []
    with open(out / "ellipses.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "cx", "cy", "a", "b", "theta"])
        for i in range(spec.count):
            sid = f"syn_{i:0{width}d}"
            img, mask, ells = synth_sample(rng, spec)
            pnm.write_pnm_raw(img, out / "images" / f"{sid}.ppm")
            pnm.write_pnm_raw(mask, out / "masks" / f"{sid}.pgm")
            for e in ells:
                writer.writerow([sid] + [repr(float(v)) for v in (e.cx, e.cy, e.a, e.b, e.theta)])
            fractions.append(float((mask > 0).mean()))
    stats = {"count": spec.count, "mean_foreground_fraction": float(np.mean(fractions))}
    log.info("generated %d samples in %s, mean foreground fraction %.4f",
             spec.count, out, stats["mean_foreground_fraction"])
    return stats


def read_ellipses(root: str | Path) -> dict[str, list[Ellipse]]:
    out: dict[str, list[Ellipse]] = {}
    with open(Path(root) / "ellipses.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["id"], []).append(
                Ellipse(*(float(row[k]) for k in ("cx", "cy", "a", "b", "theta"))))
    return out
