"""SGD with momentum and L2 weight decay, plus the step learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .tensor import Tensor


@dataclass
class OptimState:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 0.0005
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0

    @classmethod
    def for_params(cls, params: dict[str, Tensor], learning_rate: float,
                   momentum: float = 0.9, weight_decay: float = 0.0005) -> "OptimState":
        vel = {name: np.zeros_like(p.data) for name, p in params.items()}
        return cls(learning_rate, momentum, weight_decay, vel)


def sgd_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: OptimState):
    """One in-place update: ``v = m*v + (g + wd*w); w -= lr*v``.

    Parameters missing from ``grads`` are treated as having zero gradient
    (weight decay still applies).
    """
    if set(state.velocity) != set(params):
        raise ContractViolation("nn-ops.sgd_step", "velocity buffers do not match the parameter set")
    lr, mom, wd = state.learning_rate, state.momentum, state.weight_decay
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise ContractViolation("nn-ops.sgd_step", f"grad shape {g.shape} != param shape {p.shape} for {name}")
        v = state.velocity[name]
        v *= mom
        v += g
        if wd:
            v += wd * p.data
        p.data -= lr * v
    state.steps += 1
    return params, state


def lr_schedule(epoch: int, base_lr: float, step: int = 10, decay: float = 0.9) -> float:
    """``base_lr * decay ** (epoch // step)``; defaults cut 10% every 10 epochs."""
    if epoch < 0:
        raise ContractViolation("nn-ops.lr_schedule", "epoch must be non-negative")
    return base_lr * decay ** (epoch // step)
