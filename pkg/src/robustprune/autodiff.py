"""Minimal reverse-mode differentiation over a small layer zoo.

Everything is float64. Layers are stateless at forward time: caches are
returned explicitly so the same network can be evaluated from several
threads at once. Supported layers: dense, 3x3-style conv (stride 1,
"same" zero padding, odd kernel), relu, flatten.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericsError, ShapeError


@dataclass
class Tensor:
    """Dense nd-array of float64 with an optional gradient slot."""

    array: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.array = np.asarray(self.array, dtype=np.float64)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.array.shape

    @property
    def data(self) -> np.ndarray:
        """Flat view of the payload."""
        return self.array.reshape(-1)

    @property
    def size(self) -> int:
        return self.array.size


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"non-finite values produced in {where}")


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def kaiming_uniform(shape, fan_in, rng):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense:
    kind = "dense"
    prunable = True

    def __init__(self, in_features: int, out_features: int, rng=None):
        self.in_features = in_features
        self.out_features = out_features
        self.fan_in = in_features
        self.fan_out = out_features
        rng = rng or np.random.default_rng(0)
        self.W = Tensor(kaiming_uniform((out_features, in_features), in_features, rng))
        self.b = Tensor(np.zeros(out_features))

    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x, W=None):
        W = self.W.array if W is None else W
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"dense layer expects (batch, {self.in_features}), got {x.shape}"
            )
        out = x @ W.T + self.b.array
        return out, x

    def backward(self, dout, cache, W=None):
        W = self.W.array if W is None else W
        x = cache
        dW = dout.T @ x
        db = dout.sum(axis=0)
        dx = dout @ W
        return {"W": dW, "b": db}, dx


def _im2col(x, k):
    # x: (B, C, H, W) -> (B, H*W, C*k*k), stride 1, "same" zero padding
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # (B, C, H, W, k, k)
    b, c, h, w = x.shape
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b, h * w, c * k * k)


def _col2im(dcols, x_shape, k):
    b, c, h, w = x_shape
    p = k // 2
    dxp = np.zeros((b, c, h + 2 * p, w + 2 * p))
    d6 = dcols.reshape(b, h, w, c, k, k)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + h, j:j + w] += d6[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, p:p + h, p:p + w]


class Conv2d:
    """Conv with stride 1 and "same" zero padding; odd square kernels only."""

    kind = "conv"
    prunable = True

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, rng=None):
        if kernel_size % 2 != 1:
            raise ShapeError("conv supports odd kernel sizes only (same padding)")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.fan_in = in_channels * kernel_size * kernel_size
        self.fan_out = out_channels * kernel_size * kernel_size
        rng = rng or np.random.default_rng(0)
        self.W = Tensor(
            kaiming_uniform(
                (out_channels, in_channels, kernel_size, kernel_size), self.fan_in, rng
            )
        )
        self.b = Tensor(np.zeros(out_channels))

    def params(self):
        return {"W": self.W, "b": self.b}

    def forward(self, x, W=None):
        W = self.W.array if W is None else W
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"conv layer expects (batch, {self.in_channels}, H, W), got {x.shape}"
            )
        b, _, h, w = x.shape
        cols = _im2col(x, self.kernel_size)
        out = cols @ W.reshape(self.out_channels, -1).T + self.b.array
        out = out.reshape(b, h, w, self.out_channels).transpose(0, 3, 1, 2)
        return out, (cols, x.shape)

    def backward(self, dout, cache, W=None):
        W = self.W.array if W is None else W
        cols, x_shape = cache
        b, _, h, w = x_shape
        dmat = dout.transpose(0, 2, 3, 1).reshape(b, h * w, self.out_channels)
        dW = np.tensordot(dmat, cols, axes=([0, 1], [0, 1])).reshape(W.shape)
        db = dout.sum(axis=(0, 2, 3))
        dcols = dmat @ W.reshape(self.out_channels, -1)
        dx = _col2im(dcols, x_shape, self.kernel_size)
        return {"W": dW, "b": db}, dx


class ReLU:
    kind = "relu"
    prunable = False

    # subgradient at 0 is taken as 0
    def params(self):
        return {}

    def forward(self, x, W=None):
        mask = x > 0
        return x * mask, mask

    def backward(self, dout, cache, W=None):
        return {}, dout * cache


class Flatten:
    kind = "flatten"
    prunable = False

    def params(self):
        return {}

    def forward(self, x, W=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dout, cache, W=None):
        return {}, dout.reshape(cache)


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

class Network:
    """Ordered list of layers with an agreed input shape (without batch dim)."""

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)

    def forward(self, x, weights=None):
        """Run the network; returns (output, caches).

        weights, when given, is a dict {layer_index: array} substituting the
        weight matrix of those layers (used for masked forward passes).
        """
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(
                f"input shape {x.shape[1:]} does not match network input "
                f"shape {self.input_shape}"
            )
        caches = []
        for i, layer in enumerate(self.layers):
            W = weights.get(i) if weights else None
            try:
                x, cache = layer.forward(x, W=W)
            except ShapeError as e:
                raise ShapeError(f"layer {i} ({layer.kind}): {e}") from None
            _check_finite(x, f"layer {i} ({layer.kind})")
            caches.append(cache)
        return x, caches

    def backward(self, dout, caches, weights=None):
        """Backprop from dL/d(output); returns (param grads per layer, dL/dx)."""
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            W = weights.get(i) if weights else None
            g, dout = layer.backward(dout, caches[i], W=W)
            grads[i] = g or None
        return grads, dout

    def predict(self, x, weights=None):
        out, _ = self.forward(x, weights=weights)
        return out.argmax(axis=1)

    def parameters(self):
        """Flat list of (layer_index, name, Tensor) over all parameters."""
        out = []
        for i, layer in enumerate(self.layers):
            for name, t in layer.params().items():
                out.append((i, name, t))
        return out

    def prunable_indices(self):
        return [i for i, l in enumerate(self.layers) if l.prunable]

    def param_count(self):
        return sum(t.size for _, _, t in self.parameters())

    def copy(self):
        import copy

        return copy.deepcopy(self)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def per_example_cross_entropy(logits, labels):
    labels = np.asarray(labels)
    logp = _log_softmax(logits)
    return -logp[np.arange(len(labels)), labels]


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy; returns (loss, dlogits)."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.min() < 0 or labels.max() >= c:
        raise ShapeError(f"labels must lie in [0, {c}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    logp = _log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def squared_error(pred, target):
    """Mean squared error; returns (loss, dpred)."""
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    diff = pred - target
    return float((diff ** 2).mean()), 2.0 * diff / diff.size


LOSSES = {"cross_entropy": cross_entropy, "squared_error": squared_error}


@dataclass
class BackwardResult:
    loss: float
    grads: list  # per layer: {"W": arr, "b": arr} or None
    input_grad: np.ndarray
    logits: np.ndarray = field(repr=False, default=None)


def forward_backward(net: Network, x, target, loss_kind: str = "cross_entropy",
                     weights=None) -> BackwardResult:
    """One forward + backward pass. Pure: no parameter is mutated."""
    if loss_kind not in LOSSES:
        raise ShapeError(f"unknown loss kind {loss_kind!r}; valid: {sorted(LOSSES)}")
    logits, caches = net.forward(x, weights=weights)
    loss, dlogits = LOSSES[loss_kind](logits, target)
    if not np.isfinite(loss):
        raise NumericsError("non-finite loss")
    grads, dx = net.backward(dlogits, caches, weights=weights)
    return BackwardResult(float(loss), grads, dx, logits)


def input_gradient(net: Network, x, target, loss_kind: str = "cross_entropy",
                   weights=None):
    """(loss, dL/dx) without materialising parameter gradients for callers."""
    res = forward_backward(net, x, target, loss_kind, weights=weights)
    return res.loss, res.input_grad


def finite_diff_check(net: Network, x, target, loss_kind: str = "cross_entropy",
                      h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Perturbs every parameter, so the network must be small (<= 1e4 params).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if net.param_count() > 10_000:
        raise ValueError("finite_diff_check is restricted to networks with <= 1e4 parameters")
    res = forward_backward(net, x, target, loss_kind)
    worst = 0.0
    for i, name, t in net.parameters():
        analytic = res.grads[i][name]
        flat = t.array.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            lo_hi, _ = LOSSES[loss_kind](net.forward(x)[0], target)
            flat[j] = orig - h
            lo_lo, _ = LOSSES[loss_kind](net.forward(x)[0], target)
            flat[j] = orig
            numeric = (lo_hi - lo_lo) / (2 * h)
            a = analytic.reshape(-1)[j]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
