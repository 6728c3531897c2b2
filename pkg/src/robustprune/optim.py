"""SGD with momentum and single-cycle cosine learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """lr(t) = base_lr * 0.5 * (1 + cos(pi * t / total_steps))."""
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * step / total_steps))


@dataclass
class OptimizerState:
    base_lr: float
    total_steps: int
    momentum: float = 0.9
    current_step: int = 0
    velocities: list = field(default_factory=list)

    def __post_init__(self):
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")

    @property
    def lr(self) -> float:
        return cosine_lr(self.base_lr, self.current_step, self.total_steps)


def sgd_step_cosine(state: OptimizerState, params: list[np.ndarray],
                    grads: list[np.ndarray]) -> None:
    """One in-place momentum SGD step at the current cosine learning rate."""
    if len(params) != len(grads):
        raise ValueError("params and grads are not aligned")
    if state.current_step >= state.total_steps:
        raise ValueError(
            f"optimizer exhausted: step {state.current_step} of {state.total_steps}"
        )
    if not state.velocities:
        state.velocities = [np.zeros_like(p) for p in params]
    lr = state.lr
    for p, g, v in zip(params, grads, state.velocities):
        v *= state.momentum
        v += g
        p -= lr * v
    state.current_step += 1
