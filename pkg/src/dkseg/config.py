"""Run configuration: ``key = value`` lines, ``#`` starts a comment."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .model import ModelConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 4e-4
    momentum: float = 0.9
    weight_decay: float = 1e-5
    poly_power: float = 0.9
    batch_size: int = 8
    image_size: int = 64
    epochs: int = 30
    seed: int = 42
    c_d: int = 32
    d_model: int = 64
    channels: tuple[int, ...] = (16, 24, 32, 48, 64)
    blocks_per_stage: int = 2
    use_ea: bool = True
    train_frac: float = 0.8
    augment_flip: bool = True
    augment_rotate: bool = True
    augment_crop: bool = True

    def __post_init__(self):
        if self.image_size < 32 or self.image_size % 32:
            raise ConfigError(f"image_size {self.image_size} must be a positive multiple of 32")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")

    @property
    def model(self) -> ModelConfig:
        return ModelConfig(tuple(self.channels), self.blocks_per_stage, self.d_model, self.c_d, self.use_ea)

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_ints(s: str) -> tuple[int, ...]:
    s = s.strip().strip("[]()")
    return tuple(int(p) for p in s.replace(",", " ").split())


# field annotations are strings under postponed evaluation
_PARSERS = {"float": float, "int": int, "bool": _parse_bool, "tuple[int, ...]": _parse_ints}


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        parser = _PARSERS[types[key]]
        try:
            values[key] = parser(raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    try:
        return replace(base or TrainConfig(), **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def format_config(cfg: TrainConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join(map(str, v))
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
