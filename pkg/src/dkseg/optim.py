"""SGD with momentum, decoupled-from-bias weight decay, and the poly LR schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .init import is_weight


def poly_lr(lr0: float, step: int, total_steps: int, power: float = 0.9) -> float:
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    frac = min(max(step, 0), total_steps) / total_steps
    return lr0 * (1.0 - frac) ** power


@dataclass
class OptimState:
    total_steps: int
    lr0: float = 4e-4
    momentum: float = 0.9
    weight_decay: float = 1e-5
    poly_power: float = 0.9
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def lr(self, step: int) -> float:
        return poly_lr(self.lr0, step, self.total_steps, self.poly_power)


def sgd_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             state: OptimState, step: int) -> float:
    """Update ``params`` in place; returns the learning rate used.

    v <- momentum * v + grad + wd * param  (wd on weights only)
    param <- param - lr * v
    """
    lr = np.float32(state.lr(step))
    mom = np.float32(state.momentum)
    wd = np.float32(state.weight_decay)
    for name, param in params.items():
        g = grads[name]
        if g.shape != param.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {param.shape} for {name}")
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(param)
        v *= mom
        v += g
        if wd and is_weight(name):
            v += wd * param
        param -= lr * v
    return float(lr)
