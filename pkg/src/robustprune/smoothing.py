"""Noise-stability training and randomized-smoothing certification.

The certification path avoids library approximation constants: the exact
binomial tail is evaluated from log-binomial coefficients and both the
Clopper-Pearson bound and the inverse normal CDF are found by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import BackwardResult, forward_backward

ABSTAIN = -1


@dataclass
class SmoothingConfig:
    sigma: float = 0.25
    n0: int = 100
    n: int = 10_000
    alpha: float = 1e-3
    l2_budget: float = 110.0 / 255.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")
        if self.n0 > self.n:
            raise ValueError("n0 must not exceed n")
        if self.l2_budget < 0:
            raise ValueError("l2_budget must be non-negative")


def stability_loss(net, x, y, sigma: float, rng=None, weights=None) -> BackwardResult:
    """Cross-entropy on Gaussian-noised inputs (no clipping after noising)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    rng = rng or np.random.default_rng(0)
    noisy = np.asarray(x, dtype=np.float64) + sigma * rng.standard_normal(np.shape(x))
    return forward_backward(net, noisy, y, "cross_entropy", weights=weights)


def binomial_tail_upper(successes: int, trials: int, p: float) -> float:
    """P[Binomial(trials, p) >= successes], evaluated exactly."""
    if successes <= 0:
        return 1.0
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    ks = np.arange(successes, trials + 1)
    log_comb = (
        math.lgamma(trials + 1)
        - np.array([math.lgamma(k + 1) + math.lgamma(trials - k + 1) for k in ks])
    )
    log_terms = log_comb + ks * math.log(p) + (trials - ks) * math.log1p(-p)
    m = log_terms.max()
    return float(np.exp(m) * np.exp(log_terms - m).sum())


def clopper_pearson_lower(successes: int, trials: int, alpha: float) -> float:
    """Exact one-sided lower confidence bound on a binomial proportion.

    Bisection on p for P[Binomial(trials, p) >= successes] = alpha; the
    tail is increasing in p so the root is unique.
    """
    if not (0 <= successes <= trials):
        raise ValueError("need 0 <= successes <= trials")
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    if successes == 0:
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = (lo + hi) / 2.0
        if binomial_tail_upper(successes, trials, mid) < alpha:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


def normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def inverse_normal_cdf(q: float) -> float:
    """Phi^{-1}(q) by bisection on erf, accurate to ~1e-12."""
    if not (0.0 < q < 1.0):
        raise ValueError("q must lie in (0, 1)")
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = (lo + hi) / 2.0
        if normal_cdf(mid) < q:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2.0


@dataclass
class CertifyResult:
    prediction: int  # ABSTAIN on abstention
    p_lower: float
    radius: float
    certified: bool  # radius >= l2_budget (False on abstention)

    @property
    def abstained(self) -> bool:
        return self.prediction == ABSTAIN


def _noisy_counts(net, x, sigma, num, rng, num_classes, batch=512, weights=None):
    counts = np.zeros(num_classes, dtype=np.int64)
    remaining = num
    while remaining > 0:
        b = min(batch, remaining)
        noisy = x[None] + sigma * rng.standard_normal((b,) + x.shape)
        preds = net.predict(noisy, weights=weights)
        counts += np.bincount(preds, minlength=num_classes)
        remaining -= b
    return counts


def smoothing_certify(net, x, cfg: SmoothingConfig, rng=None,
                      num_classes: int = 10, weights=None) -> CertifyResult:
    """Monte-Carlo certification of the Gaussian-smoothed classifier at x.

    Picks the top class from n0 selection samples, lower-bounds its
    probability with n fresh samples, and certifies the l2 radius
    sigma * Phi^{-1}(p_lower) when p_lower > 1/2.
    """
    rng = rng or np.random.default_rng(0)
    x = np.asarray(x, dtype=np.float64)
    selection = _noisy_counts(net, x, cfg.sigma, cfg.n0, rng, num_classes, weights=weights)
    top = int(selection.argmax())
    estimation = _noisy_counts(net, x, cfg.sigma, cfg.n, rng, num_classes, weights=weights)
    p_lower = clopper_pearson_lower(int(estimation[top]), cfg.n, cfg.alpha)
    if p_lower <= 0.5:
        return CertifyResult(ABSTAIN, p_lower, 0.0, False)
    radius = cfg.sigma * inverse_normal_cdf(p_lower)
    return CertifyResult(top, p_lower, radius, radius >= cfg.l2_budget)
