"""Importance-score pruning: scaled initialization, straight-through top-k
optimization, mask finalization, fine-tuning, and the comparison baselines
(magnitude pruning, random score inits, multi-step, structured, quantized).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Conv2d, Network, forward_backward
from .errors import ConfigError
from .optim import OptimizerState, sgd_step_cosine

GRANULARITIES = ("weight", "filter")
SCORE_INIT_KINDS = ("scaled", "xavier-normal", "xavier-uniform",
                    "kaiming-normal", "kaiming-uniform")


def kept_count(n: int, p: float) -> int:
    """Weights kept per layer at pruning ratio p (round half up, at least 1)."""
    return max(1, int(np.floor((1.0 - p / 100.0) * n + 0.5)))


def topk_flags(magnitudes: np.ndarray, keep: int) -> np.ndarray:
    """Boolean flags for the `keep` largest entries; ties keep the lower index."""
    flat = magnitudes.reshape(-1)
    order = np.lexsort((np.arange(flat.size), -flat))
    flags = np.zeros(flat.size, dtype=bool)
    flags[order[:keep]] = True
    return flags.reshape(magnitudes.shape)


def _check_ratio(p):
    if not (0.0 <= p < 100.0):
        raise ConfigError(f"pruning ratio must lie in [0, 100), got {p}")


@dataclass
class ImportanceScores:
    """One trainable score per prunable weight (or per filter)."""

    values: dict[int, np.ndarray]  # layer index -> scores
    granularity: str = "weight"
    weight_shapes: dict[int, tuple] = field(default_factory=dict)

    def copy(self):
        return ImportanceScores({i: v.copy() for i, v in self.values.items()},
                                self.granularity, dict(self.weight_shapes))


@dataclass
class PruneMask:
    masks: dict[int, np.ndarray]  # layer index -> {0,1} array shaped like W
    ratio: float
    granularity: str = "weight"

    def kept_counts(self):
        return {i: int(m.sum()) for i, m in self.masks.items()}


@dataclass
class PruneConfig:
    ratio: float
    granularity: str = "weight"
    scaling_k: float = 6.0
    epochs: int = 20
    lr: float = 0.1
    momentum: float = 0.9
    objective: str = "benign"
    data_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        _check_ratio(self.ratio)
        if self.scaling_k <= 0:
            raise ConfigError("scaling_k must be positive")
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f"granularity must be one of {GRANULARITIES}")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")


# ---------------------------------------------------------------------------
# masks and score initializations
# ---------------------------------------------------------------------------

def lwm_mask(net: Network, p: float) -> PruneMask:
    """Keep the largest-|theta| weights per prunable layer (equal per-layer ratio)."""
    _check_ratio(p)
    masks = {}
    for i in net.prunable_indices():
        w = net.layers[i].W.array
        flags = topk_flags(np.abs(w), kept_count(w.size, p))
        masks[i] = flags.astype(np.float64)
    return PruneMask(masks, p, "weight")


def scaled_init(net: Network, scaling_k: float = 6.0) -> ImportanceScores:
    """s_i = sqrt(k / fan_in) * theta_i / max|theta| per prunable layer."""
    if scaling_k <= 0:
        raise ConfigError("scaling_k must be positive")
    values, shapes = {}, {}
    for i in net.prunable_indices():
        layer = net.layers[i]
        w = layer.W.array
        m = np.abs(w).max()
        if m == 0.0:
            raise ConfigError(f"layer {i}: all-zero weights, scaled init undefined")
        values[i] = np.sqrt(scaling_k / layer.fan_in) * w / m
        shapes[i] = w.shape
    return ImportanceScores(values, "weight", shapes)


def random_score_init(net: Network, kind: str, rng=None) -> ImportanceScores:
    """Xavier/Kaiming random score initializations (the Table-style baselines)."""
    rng = rng or np.random.default_rng(0)
    values, shapes = {}, {}
    for i in net.prunable_indices():
        layer = net.layers[i]
        fi, fo = layer.fan_in, layer.fan_out
        shape = layer.W.array.shape
        if kind == "xavier-uniform":
            bound = np.sqrt(6.0 / (fi + fo))
            values[i] = rng.uniform(-bound, bound, size=shape)
        elif kind == "xavier-normal":
            values[i] = rng.normal(0.0, np.sqrt(2.0 / (fi + fo)), size=shape)
        elif kind == "kaiming-uniform":
            bound = np.sqrt(6.0 / fi)
            values[i] = rng.uniform(-bound, bound, size=shape)
        elif kind == "kaiming-normal":
            values[i] = rng.normal(0.0, np.sqrt(2.0 / fi), size=shape)
        else:
            raise ConfigError(f"unknown score init {kind!r}")
        shapes[i] = shape
    return ImportanceScores(values, "weight", shapes)


def structured_scaled_init(net: Network, scaling_k: float = 6.0) -> ImportanceScores:
    """One score per conv output filter, scaled by the layer constant."""
    conv_idx = [i for i in net.prunable_indices()
                if isinstance(net.layers[i], Conv2d)]
    if not conv_idx:
        raise ConfigError("structured pruning requires prunable conv layers")
    values, shapes = {}, {}
    for i in conv_idx:
        layer = net.layers[i]
        w = layer.W.array
        m = np.abs(w).max()
        if m == 0.0:
            raise ConfigError(f"layer {i}: all-zero weights, scaled init undefined")
        norms = np.sqrt((w ** 2).reshape(w.shape[0], -1).sum(axis=1))
        values[i] = np.sqrt(scaling_k / layer.fan_in) * norms / m
        shapes[i] = w.shape
    return ImportanceScores(values, "filter", shapes)


def structured_scores(net: Network, p: float) -> PruneMask:
    """Filter-granularity magnitude mask: keep the largest-l2 filters per conv layer."""
    _check_ratio(p)
    scores = structured_scaled_init(net, 6.0)
    return finalize_mask(scores, p)


def finalize_mask(scores: ImportanceScores, p: float) -> PruneMask:
    """Binarize |scores| with per-layer top-k (same tie rule as lwm_mask)."""
    _check_ratio(p)
    masks = {}
    for i, s in scores.values.items():
        if scores.granularity == "weight":
            flags = topk_flags(np.abs(s), kept_count(s.size, p))
            masks[i] = flags.astype(np.float64)
        else:
            n_filters = s.size
            flags = topk_flags(np.abs(s), kept_count(n_filters, p))
            shape = scores.weight_shapes[i]
            masks[i] = np.broadcast_to(
                flags.astype(np.float64).reshape((n_filters,) + (1,) * (len(shape) - 1)),
                shape,
            ).copy()
    return PruneMask(masks, p, scores.granularity)


def effective_weights(net: Network, mask: PruneMask) -> dict[int, np.ndarray]:
    return {i: net.layers[i].W.array * m for i, m in mask.masks.items()}


# ---------------------------------------------------------------------------
# straight-through masked optimization
# ---------------------------------------------------------------------------

def score_gradients(net: Network, scores: ImportanceScores, weight_grads):
    """Straight-through rule: dL/ds_i = theta_i * dL/dw_i (filter: summed)."""
    out = {}
    for i in scores.values:
        theta = net.layers[i].W.array
        g = theta * weight_grads[i]
        if scores.granularity == "filter":
            g = g.reshape(g.shape[0], -1).sum(axis=1)
        out[i] = g
    return out


def masked_forward_ste(net: Network, scores: ImportanceScores, p: float, x):
    """Forward with w = topk-mask(|s|) * theta; returns (output, backward hook).

    hook(dout) backpropagates dL/d(output) and returns the straight-through
    score gradients {layer: dL/ds}. theta itself is never updated here.
    """
    mask = finalize_mask(scores, p)
    weights = effective_weights(net, mask)
    out, caches = net.forward(x, weights=weights)

    def hook(dout):
        grads, _ = net.backward(dout, caches, weights=weights)
        wgrads = {i: grads[i]["W"] for i in scores.values}
        return score_gradients(net, scores, wgrads)

    return out, hook


def prune_optimize(net: Network, scores: ImportanceScores, cfg: PruneConfig,
                   stream, objective=None, rng=None):
    """SGD over importance scores with the mask recomputed every minibatch.

    Returns (scores, per-epoch log of mean loss and mean ||dL/ds||_2).
    theta is left bit-identical.
    """
    rng = rng or np.random.default_rng(cfg.seed)
    if objective is None:
        objective = lambda n, x, y, weights=None, rng=None, epoch=0: forward_backward(
            n, x, y, "cross_entropy", weights=weights)
    log = []
    if cfg.epochs == 0:
        return scores, log

    idx = sorted(scores.values)
    params = [scores.values[i] for i in idx]
    total = cfg.epochs * stream.batches_per_epoch
    opt = OptimizerState(cfg.lr, total, cfg.momentum)

    for epoch in range(cfg.epochs):
        losses, gnorms = [], []
        for x, y in stream.epoch(epoch):
            mask = finalize_mask(scores, cfg.ratio)
            weights = effective_weights(net, mask)
            res = objective(net, x, y, weights=weights, rng=rng, epoch=epoch)
            wgrads = {i: res.grads[i]["W"] for i in idx}
            sgrads = score_gradients(net, scores, wgrads)
            gnorms.append(float(np.sqrt(sum(
                float((g ** 2).sum()) for g in sgrads.values()))))
            losses.append(res.loss)
            sgd_step_cosine(opt, params, [sgrads[i] for i in idx])
        log.append({
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "score_grad_norm": float(np.mean(gnorms)),
        })
    return scores, log


# ---------------------------------------------------------------------------
# training with (or without) a frozen mask
# ---------------------------------------------------------------------------

def train(net: Network, objective, stream, epochs: int, lr: float,
          momentum: float = 0.9, rng=None, mask: PruneMask | None = None,
          on_epoch=None):
    """Momentum SGD with cosine decay; with a mask, masked weights stay 0 exactly.

    Returns the per-epoch mean-loss log.
    """
    rng = rng or np.random.default_rng(0)
    if mask is not None:
        for i, m in mask.masks.items():
            net.layers[i].W.array *= m
    log = []
    if epochs == 0:
        return log

    named = net.parameters()
    params = [t.array for _, _, t in named]
    total = epochs * stream.batches_per_epoch
    opt = OptimizerState(lr, total, momentum)

    for epoch in range(epochs):
        losses = []
        for x, y in stream.epoch(epoch):
            res = objective(net, x, y, rng=rng, epoch=epoch)
            grads = []
            for i, name, _ in named:
                g = res.grads[i][name]
                if mask is not None and name == "W" and i in mask.masks:
                    g = g * mask.masks[i]
                grads.append(g)
            sgd_step_cosine(opt, params, grads)
            if mask is not None:
                for i, m in mask.masks.items():
                    net.layers[i].W.array *= m
            losses.append(res.loss)
        log.append({"epoch": epoch, "loss": float(np.mean(losses))})
        if on_epoch is not None and on_epoch(epoch) is False:
            break
    return log


def finetune(net: Network, mask: PruneMask, objective, stream, epochs: int,
             lr: float = 0.01, momentum: float = 0.9, rng=None, on_epoch=None):
    """Retrain only the unmasked connections, mask frozen throughout."""
    for i in mask.masks:
        if mask.masks[i].shape != net.layers[i].W.array.shape:
            raise ConfigError(f"mask for layer {i} does not match the weight shape")
    return train(net, objective, stream, epochs, lr, momentum, rng=rng,
                 mask=mask, on_epoch=on_epoch)


def multi_step_lwm(net: Network, p_schedule, objective, stream,
                   epochs_per_step: int, lr: float = 0.01, momentum: float = 0.9,
                   rng=None):
    """Alternate magnitude masking and fine-tuning over an increasing schedule."""
    p_schedule = list(p_schedule)
    if any(b <= a for a, b in zip(p_schedule, p_schedule[1:])):
        raise ConfigError("pruning schedule must be strictly increasing")
    mask = None
    for p in p_schedule:
        mask = lwm_mask(net, p)
        finetune(net, mask, objective, stream, epochs_per_step, lr, momentum, rng=rng)
    return net, mask


# ---------------------------------------------------------------------------
# quantization
# ---------------------------------------------------------------------------

def quantize_weights(net: Network, bits: int):
    """Symmetric uniform weight quantization; zeros are preserved exactly.

    Returns (quantized network copy, per-layer report of step and max error).
    """
    if not (2 <= bits <= 16):
        raise ConfigError("bits must lie in [2, 16]")
    out = net.copy()
    levels = 2 ** (bits - 1) - 1
    report = {}
    for i, layer in enumerate(out.layers):
        params = layer.params()
        if "W" not in params:
            continue
        w = params["W"].array
        m = np.abs(w).max()
        if m == 0.0:
            report[i] = {"delta": 0.0, "max_error": 0.0}
            continue
        delta = m / levels
        q = np.copysign(np.floor(np.abs(w) / delta + 0.5), w) * delta
        params["W"].array = q
        report[i] = {"delta": float(delta), "max_error": float(np.abs(q - w).max())}
    return out, report
