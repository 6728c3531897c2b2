"""Loss-objective factory shared by pretraining, pruning, and fine-tuning.

Each objective is a callable (net, x, y, *, weights=None, rng=None,
epoch=0) -> BackwardResult, so any training stage can swap the loss family
without changing its loop.
"""

from __future__ import annotations

from .attacks import AttackConfig, adversarial_loss
from .autodiff import forward_backward
from .bounds import EpsilonSchedule, ibp_robust_loss
from .errors import ConfigError
from .smoothing import stability_loss

OBJECTIVE_TAGS = ("benign", "adversarial", "ibp", "smoothing")


def make_objective(tag: str, *, attack: AttackConfig | None = None,
                   ibp_schedule: EpsilonSchedule | None = None,
                   sigma: float | None = None):
    if tag == "benign":
        def benign(net, x, y, *, weights=None, rng=None, epoch=0):
            return forward_backward(net, x, y, "cross_entropy", weights=weights)
        return benign

    if tag == "adversarial":
        if attack is None:
            raise ConfigError("adversarial objective needs an attack config")

        def adversarial(net, x, y, *, weights=None, rng=None, epoch=0):
            return adversarial_loss(net, x, y, attack, rng=rng, weights=weights)
        return adversarial

    if tag == "ibp":
        if ibp_schedule is None:
            raise ConfigError("ibp objective needs an epsilon schedule")

        def ibp(net, x, y, *, weights=None, rng=None, epoch=0):
            return ibp_robust_loss(net, x, y, ibp_schedule(epoch), weights=weights)
        return ibp

    if tag == "smoothing":
        if sigma is None:
            raise ConfigError("smoothing objective needs sigma")

        def smoothing(net, x, y, *, weights=None, rng=None, epoch=0):
            return stability_loss(net, x, y, sigma, rng=rng, weights=weights)
        return smoothing

    raise ConfigError(f"unknown objective {tag!r}; valid: {OBJECTIVE_TAGS}")
