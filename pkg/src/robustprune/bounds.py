"""Interval bound propagation and the IBP worst-case training loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    BackwardResult,
    Conv2d,
    Dense,
    Flatten,
    ReLU,
    cross_entropy,
    forward_backward,
)
from .errors import ShapeError


@dataclass
class Interval:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if self.lower.shape != self.upper.shape:
            raise ShapeError("interval bounds must share a shape")
        if np.any(self.lower > self.upper + 1e-12):
            raise ShapeError("interval has lower > upper")


def _forward_nobias(layer, x, W):
    """Affine layer forward with the bias removed (radius stream)."""
    out, cache = layer.forward(x, W=W)
    if isinstance(layer, Dense):
        out = out - layer.b.array
    else:
        out = out - layer.b.array[None, :, None, None]
    return out, cache


def ibp_propagate(net, x, epsilon: float, weights=None) -> Interval:
    """Sound elementwise output bounds over the l-inf epsilon ball around x."""
    x = np.asarray(x, dtype=np.float64)
    lo = x - epsilon
    hi = x + epsilon
    for i, layer in enumerate(net.layers):
        W = weights.get(i) if weights else None
        if isinstance(layer, (Dense, Conv2d)):
            W_arr = layer.W.array if W is None else W
            mu, r = (lo + hi) / 2.0, (hi - lo) / 2.0
            mu_out, _ = layer.forward(mu, W=W_arr)
            r_out, _ = _forward_nobias(layer, r, np.abs(W_arr))
            lo, hi = mu_out - r_out, mu_out + r_out
        elif isinstance(layer, ReLU):
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
        elif isinstance(layer, Flatten):
            lo = lo.reshape(lo.shape[0], -1)
            hi = hi.reshape(hi.shape[0], -1)
        else:
            raise ShapeError(f"layer {i} ({layer.kind}) is not supported by IBP")
    return Interval(lo, hi)


def worst_case_logits(interval: Interval, labels) -> np.ndarray:
    """Elementwise adversarial logits: lower bound at the label, upper elsewhere."""
    labels = np.asarray(labels)
    z = interval.upper.copy()
    idx = np.arange(len(labels))
    z[idx, labels] = interval.lower[idx, labels]
    return z


@dataclass
class EpsilonSchedule:
    """Linear ramp from 0 to target over ramp_epochs, then constant."""

    target: float
    ramp_epochs: int

    def __call__(self, epoch: int) -> float:
        if self.ramp_epochs <= 0:
            return self.target
        return self.target * min(1.0, max(0.0, epoch) / self.ramp_epochs)


def ibp_robust_loss(net, x, y, epsilon: float, weights=None) -> BackwardResult:
    """Cross-entropy over IBP worst-case logits; equals the benign loss at eps=0.

    The bounds decompose into a centre stream (plain forward) and a radius
    stream (forward through |W| without bias), so the backward pass is two
    stacked layer backprops recombined per layer.
    """
    if epsilon == 0.0:
        return forward_backward(net, x, y, "cross_entropy", weights=weights)

    x = np.asarray(x, dtype=np.float64)
    mu = x
    r = np.full_like(x, float(epsilon))

    caches_mu: list = []
    caches_r: list = []
    relu_acts: list = []
    for i, layer in enumerate(net.layers):
        W = weights.get(i) if weights else None
        if isinstance(layer, (Dense, Conv2d)):
            W_arr = layer.W.array if W is None else W
            mu, cm = layer.forward(mu, W=W_arr)
            r, cr = _forward_nobias(layer, r, np.abs(W_arr))
            caches_mu.append(cm)
            caches_r.append(cr)
            relu_acts.append(None)
        elif isinstance(layer, ReLU):
            lo, hi = mu - r, mu + r
            lo_m, hi_m = lo > 0, hi > 0
            lo, hi = lo * lo_m, hi * hi_m
            mu, r = (lo + hi) / 2.0, (hi - lo) / 2.0
            caches_mu.append(None)
            caches_r.append(None)
            relu_acts.append((lo_m, hi_m))
        elif isinstance(layer, Flatten):
            shape = mu.shape
            mu = mu.reshape(mu.shape[0], -1)
            r = r.reshape(r.shape[0], -1)
            caches_mu.append(shape)
            caches_r.append(shape)
            relu_acts.append(None)
        else:
            raise ShapeError(f"layer {i} ({layer.kind}) is not supported by IBP")

    labels = np.asarray(y)
    idx = np.arange(len(labels))
    z = (mu + r).copy()
    z[idx, labels] = (mu - r)[idx, labels]
    loss, dz = cross_entropy(z, labels)

    # at the label the worst case is mu - r, elsewhere mu + r
    sign = np.ones_like(dz)
    sign[idx, labels] = -1.0
    dmu, dr = dz, dz * sign

    grads: list = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        W = weights.get(i) if weights else None
        if isinstance(layer, (Dense, Conv2d)):
            W_arr = layer.W.array if W is None else W
            g_mu, dmu = layer.backward(dmu, caches_mu[i], W=W_arr)
            g_r, dr = layer.backward(dr, caches_r[i], W=np.abs(W_arr))
            grads[i] = {"W": g_mu["W"] + g_r["W"] * np.sign(W_arr), "b": g_mu["b"]}
        elif isinstance(layer, ReLU):
            lo_m, hi_m = relu_acts[i]
            dlo = (dmu - dr) / 2.0 * lo_m
            dhi = (dmu + dr) / 2.0 * hi_m
            dmu, dr = dlo + dhi, dhi - dlo
        elif isinstance(layer, Flatten):
            dmu = dmu.reshape(caches_mu[i])
            dr = dr.reshape(caches_r[i])

    return BackwardResult(float(loss), grads, dmu, z)
