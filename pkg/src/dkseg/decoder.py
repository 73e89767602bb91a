"""Top-down decoder with unified channel adaptation (every stage -> C_d)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import init
from .autodiff import Tensor
from .encoder import FeaturePyramid


@dataclass
class DecoderFeatures:
    stages: list[Tensor]  # D1..D5, index 0 is D1

    @property
    def c_d(self) -> int:
        return self.stages[0].shape[1]

    def __getitem__(self, i: int) -> Tensor:
        return self.stages[i - 1]


def init_params(rng: np.random.Generator, stage_channels, c_d: int) -> dict:
    p: dict[str, np.ndarray] = {}
    for i, c in enumerate(stage_channels, start=1):
        init.conv(p, rng, f"uca{i}", c, c_d, 1)
    for i in range(1, 5):
        init.conv(p, rng, f"dec{i}.fuse", c_d, c_d, 3)
    return p


def unify_channels(pyramid: FeaturePyramid, p: dict) -> list[Tensor]:
    return [ad.relu(ad.conv2d(f, p[f"uca{i}.w"], p[f"uca{i}.b"]))
            for i, f in enumerate(pyramid.stages, start=1)]


def fuse(prev: Tensor, lateral: Tensor, w: Tensor, b: Tensor) -> Tensor:
    up = ad.upsample_bilinear(prev, 2)
    if up.shape != lateral.shape:
        raise ValueError(f"decoder spatial mismatch: upsampled {up.shape} vs lateral {lateral.shape}")
    return ad.relu(ad.conv2d(ad.add(up, lateral), w, b, pad=1))


def decode(unified: list[Tensor], p: dict) -> DecoderFeatures:
    if len(unified) != 5:
        raise ValueError(f"expected 5 unified stages, got {len(unified)}")
    d = [None] * 5
    d[4] = unified[4]
    for i in range(4, 0, -1):
        d[i - 1] = fuse(d[i], unified[i - 1], p[f"dec{i}.fuse.w"], p[f"dec{i}.fuse.b"])
    return DecoderFeatures(d)
