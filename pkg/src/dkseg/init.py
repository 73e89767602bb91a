"""Parameter initialisation: Kaiming-uniform (fan-in) weights, zero biases."""

from __future__ import annotations

import math

import numpy as np


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def conv(params: dict, rng: np.random.Generator, name: str, cin: int, cout: int, k: int,
         gain: float = 1.0) -> None:
    params[f"{name}.w"] = gain * kaiming_uniform(rng, (cout, cin, k, k), cin * k * k)
    params[f"{name}.b"] = np.zeros(cout, dtype=np.float32)


def dense(params: dict, rng: np.random.Generator, name: str, din: int, dout: int) -> None:
    params[f"{name}.w"] = kaiming_uniform(rng, (din, dout), din)
    params[f"{name}.b"] = np.zeros(dout, dtype=np.float32)


def is_weight(name: str) -> bool:
    """Weight decay applies to these; biases and scalar offsets are exempt."""
    return name.endswith(".w")
