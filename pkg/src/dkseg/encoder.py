"""Five-stage residual encoder producing the feature pyramid F1..F5."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import init
from .autodiff import Tensor

STRIDES = (2, 4, 8, 16, 32)


@dataclass(frozen=True)
class BackboneConfig:
    channels: tuple[int, ...] = (16, 24, 32, 48, 64)
    blocks_per_stage: int = 2

    def __post_init__(self):
        if len(self.channels) != 5:
            raise ValueError(f"need 5 stage channel counts, got {len(self.channels)}")
        if any(b < a for a, b in zip(self.channels, self.channels[1:])):
            raise ValueError("stage channels must be nondecreasing")
        if self.blocks_per_stage < 0:
            raise ValueError("blocks_per_stage must be >= 0")


@dataclass
class FeaturePyramid:
    stages: list[Tensor]

    @property
    def channels(self) -> list[int]:
        return [f.shape[1] for f in self.stages]

    @property
    def strides(self) -> tuple[int, ...]:
        return STRIDES

    def __getitem__(self, i: int) -> Tensor:
        """1-based stage access, ``pyr[5]`` is the deepest map."""
        return self.stages[i - 1]


# The last conv of each residual branch starts at 0.2x Kaiming. Without
# normalisation, full-gain branches compound over the ten blocks and the
# initial logits have a std in the hundreds (about 1 at this gain).
RESIDUAL_INIT_GAIN = 0.2


def init_params(rng: np.random.Generator, cfg: BackboneConfig, in_channels: int = 3) -> dict:
    p: dict[str, np.ndarray] = {}
    cin = in_channels
    for i, c in enumerate(cfg.channels, start=1):
        init.conv(p, rng, f"enc{i}.down", cin, c, 3)
        for j in range(cfg.blocks_per_stage):
            init.conv(p, rng, f"enc{i}.block{j}.conv1", c, c, 3)
            init.conv(p, rng, f"enc{i}.block{j}.conv2", c, c, 3, gain=RESIDUAL_INIT_GAIN)
        cin = c
    return p


def _conv(p: dict, name: str, x: Tensor, stride: int = 1) -> Tensor:
    w = p[name + ".w"]
    return ad.conv2d(x, w, p[name + ".b"], stride=stride, pad=(w.shape[-1] - 1) // 2)


def residual_block(p: dict, name: str, x: Tensor) -> Tensor:
    h = ad.relu(_conv(p, name + ".conv1", x))
    h = _conv(p, name + ".conv2", h)
    return ad.relu(ad.add(h, x))


def encode(image: Tensor, p: dict, cfg: BackboneConfig) -> FeaturePyramid:
    if image.ndim != 4:
        raise ValueError(f"image must be [N,C,H,W], got {image.shape}")
    h, w = image.shape[2:]
    if h < 32 or w < 32 or h % 32 or w % 32:
        raise ValueError(f"input size {h}x{w} must be a multiple of 32 (and >= 32)")
    stages = []
    x = image
    for i in range(1, 6):
        x = ad.relu(_conv(p, f"enc{i}.down", x, stride=2))
        for j in range(cfg.blocks_per_stage):
            x = residual_block(p, f"enc{i}.block{j}", x)
        stages.append(x)
    return FeaturePyramid(stages)
