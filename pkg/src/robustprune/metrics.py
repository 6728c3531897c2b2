"""Benign, empirical-robust, and verified-robust accuracy evaluation.

Per-example randomness is derived from (seed, example index, restart
index), so results are identical whether evaluation runs serially or
chunked across threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .attacks import AttackConfig
from .autodiff import input_gradient
from .bounds import ibp_propagate, worst_case_logits
from .errors import ConfigError
from .smoothing import SmoothingConfig, smoothing_certify

METRIC_NAMES = ("benign", "era", "vra_t", "vra_s")


def _chunks(n, size):
    return [np.arange(start, min(start + size, n)) for start in range(0, n, size)]


def _era_chunk(net, x, y, cfg: AttackConfig, seed, indices, weights=None):
    """Robust flags for one chunk; per-(example, restart) rng streams."""
    preds = net.predict(x, weights=weights)
    robust = preds == y
    for r in range(cfg.restarts):
        if cfg.random_start:
            noise = np.stack([
                np.random.default_rng(np.random.SeedSequence([seed, int(i), r]))
                .uniform(-cfg.epsilon, cfg.epsilon, size=x.shape[1:])
                for i in indices
            ])
            start = np.clip(np.clip(x + noise, x - cfg.epsilon, x + cfg.epsilon), 0.0, 1.0)
        else:
            start = x
        x_adv = start
        for _ in range(cfg.steps):
            _, grad = input_gradient(net, x_adv, y, weights=weights)
            x_adv = np.clip(
                np.clip(x_adv + cfg.step_size * np.sign(grad), x - cfg.epsilon, x + cfg.epsilon),
                0.0, 1.0,
            )
        robust &= net.predict(x_adv, weights=weights) == y
    return robust


def _vra_s_chunk(net, x, y, cfg: SmoothingConfig, seed, indices, num_classes,
                 weights=None):
    ok = np.zeros(len(indices), dtype=bool)
    for j, i in enumerate(indices):
        rng = np.random.default_rng(np.random.SeedSequence([seed, int(i), 0]))
        res = smoothing_certify(net, x[j], cfg, rng=rng, num_classes=num_classes,
                                weights=weights)
        ok[j] = res.certified and res.prediction == y[j]
    return ok


def evaluate_metrics(net, dataset, which, *, attack: AttackConfig | None = None,
                     ibp_epsilon: float | None = None,
                     smoothing: SmoothingConfig | None = None,
                     seed: int = 0, parallel: bool = False, workers: int = 4,
                     batch_size: int = 256, weights=None) -> dict[str, float]:
    """Compute the requested accuracy metrics on a dataset.

    which: iterable drawn from {"benign", "era", "vra_t", "vra_s"}.
    """
    which = list(which)
    for name in which:
        if name not in METRIC_NAMES:
            raise ConfigError(f"unknown metric {name!r}; valid: {METRIC_NAMES}")
    if "era" in which and attack is None:
        raise ConfigError("era requested but no attack config supplied")
    if "vra_t" in which and ibp_epsilon is None:
        raise ConfigError("vra_t requested but no ibp epsilon supplied")
    if "vra_s" in which and smoothing is None:
        raise ConfigError("vra_s requested but no smoothing config supplied")

    x, y = dataset.images, dataset.labels
    n = len(y)
    num_classes = int(y.max()) + 1 if n else 0
    out: dict[str, float] = {}

    def over_chunks(fn):
        chunks = _chunks(n, batch_size)
        if parallel and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(fn, chunks))
        else:
            parts = [fn(c) for c in chunks]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=bool)

    if "benign" in which:
        flags = over_chunks(lambda c: net.predict(x[c], weights=weights) == y[c])
        out["benign"] = float(flags.mean()) if n else 0.0

    if "era" in which:
        flags = over_chunks(lambda c: _era_chunk(net, x[c], y[c], attack, seed, c,
                                                 weights=weights))
        out["era"] = float(flags.mean()) if n else 0.0

    if "vra_t" in which:
        def vra_t(c):
            interval = ibp_propagate(net, x[c], ibp_epsilon, weights=weights)
            return worst_case_logits(interval, y[c]).argmax(axis=1) == y[c]

        flags = over_chunks(vra_t)
        out["vra_t"] = float(flags.mean()) if n else 0.0

    if "vra_s" in which:
        flags = over_chunks(lambda c: _vra_s_chunk(net, x[c], y[c], smoothing, seed,
                                                   c, num_classes, weights=weights))
        out["vra_s"] = float(flags.mean()) if n else 0.0

    return out
