"""Projected gradient descent (l-inf) attack and the adversarial loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    BackwardResult,
    forward_backward,
    input_gradient,
    per_example_cross_entropy,
)


@dataclass
class AttackConfig:
    epsilon: float
    steps: int = 10
    step_size: float | None = None
    restarts: int = 1
    random_start: bool = True

    def __post_init__(self):
        if self.epsilon < 0 or self.epsilon > 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be positive")
        if self.step_size is None:
            # step-size rule: 2.5 * epsilon / steps
            self.step_size = 2.5 * self.epsilon / self.steps
        if self.epsilon > 0 and self.step_size <= 0:
            raise ValueError("step_size must be positive")


def _project(x_adv, x, epsilon):
    return np.clip(np.clip(x_adv, x - epsilon, x + epsilon), 0.0, 1.0)


def pgd_attack(net, x, y, cfg: AttackConfig, rng=None, weights=None):
    """Best-of-restarts signed-gradient attack inside the l-inf epsilon ball.

    The clean input is always kept as a candidate, so the returned batch
    never has lower loss than the unperturbed one.
    """
    x = np.asarray(x, dtype=np.float64)
    rng = rng or np.random.default_rng(0)
    logits, _ = net.forward(x, weights=weights)
    best = x.copy()
    best_loss = per_example_cross_entropy(logits, y)

    for _ in range(cfg.restarts):
        if cfg.random_start:
            x_adv = _project(
                x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape), x, cfg.epsilon
            )
        else:
            x_adv = x.copy()
        for _ in range(cfg.steps):
            _, grad = input_gradient(net, x_adv, y, weights=weights)
            x_adv = _project(x_adv + cfg.step_size * np.sign(grad), x, cfg.epsilon)
        logits, _ = net.forward(x_adv, weights=weights)
        losses = per_example_cross_entropy(logits, y)
        better = losses > best_loss
        best[better] = x_adv[better]
        best_loss = np.where(better, losses, best_loss)

    return best


def adversarial_loss(net, x, y, cfg: AttackConfig, rng=None,
                     weights=None) -> BackwardResult:
    """Cross-entropy on PGD examples; attack generation takes no parameter grads."""
    x_adv = pgd_attack(net, x, y, cfg, rng=rng, weights=weights)
    return forward_backward(net, x_adv, y, "cross_entropy", weights=weights)
