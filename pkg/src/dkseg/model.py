"""Full segmentation network: encoder -> (EA context, UCA decoder) -> DK head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import attention, decoder, encoder, head
from .autodiff import Tensor
from .encoder import BackboneConfig


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple[int, ...] = (16, 24, 32, 48, 64)
    blocks_per_stage: int = 2
    d_model: int = 64
    c_d: int = 32
    use_ea: bool = True

    @property
    def backbone(self) -> BackboneConfig:
        return BackboneConfig(tuple(self.channels), self.blocks_per_stage)

    @property
    def context_dim(self) -> int:
        return self.d_model if self.use_ea else self.channels[-1]


@dataclass
class ModelOutput:
    preds: list[head.StagePrediction]
    context: attention.GlobalContext
    trace: head.HeadTrace = field(default_factory=head.HeadTrace)

    @property
    def logits(self) -> Tensor:
        return self.preds[-1].logits


def init_params(cfg: ModelConfig, seed: int | np.random.Generator = 0) -> dict[str, np.ndarray]:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = encoder.init_params(rng, cfg.backbone)
    if cfg.use_ea:
        p.update(attention.init_params(rng, cfg.channels, cfg.d_model))
    p.update(decoder.init_params(rng, cfg.channels, cfg.c_d))
    p.update(head.init_params(rng, cfg.context_dim, cfg.d_model, cfg.c_d))
    return p


def config_from_params(params: dict[str, np.ndarray]) -> ModelConfig:
    """Recover the architecture from parameter shapes (checkpoints carry no config)."""
    try:
        channels = tuple(int(params[f"enc{i}.down.w"].shape[0]) for i in range(1, 6))
        blocks = sum(1 for k in params if k.startswith("enc1.block") and k.endswith(".conv1.w"))
        c_d = int(params["uca1.w"].shape[0])
        d_model = int(params["dk.phi1.w"].shape[1])
    except KeyError as exc:
        raise ValueError(f"checkpoint is missing parameter {exc}") from None
    return ModelConfig(channels, blocks, d_model, c_d, use_ea="ea.q.w" in params)


def forward(image: Tensor, p: dict[str, Tensor], cfg: ModelConfig, trace: bool = False) -> ModelOutput:
    pyr = encoder.encode(image, p, cfg.backbone)
    if cfg.use_ea:
        ctx = attention.encoder_attention(attention.pool_stages(pyr), p)
    else:
        ctx = attention.deepest_stage_context(pyr)
    dec = decoder.decode(decoder.unify_channels(pyr, p), p)
    tr = head.HeadTrace() if trace else None
    preds = head.run_head(ctx, dec, p, tr)
    return ModelOutput(preds, ctx, tr or head.HeadTrace())


def as_constants(params: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in params.items()}
