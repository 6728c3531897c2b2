"""Named small architectures with per-layer fan-in metadata.

Conv layers are 3x3, stride 1, "same" padding throughout (the only conv
configuration the core supports), so parameter counts of the conv nets
are reproducible but intentionally not matched to any published figure.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Conv2d, Dense, Flatten, Network, ReLU

ARCHITECTURES = ("cnn-small", "cnn-large", "vgg4", "mlp-2x256")


def _mlp(input_shape, widths, num_classes, rng):
    layers = [Flatten()]
    dim = int(np.prod(input_shape))
    for w in widths:
        layers += [Dense(dim, w, rng), ReLU()]
        dim = w
    layers.append(Dense(dim, num_classes, rng))
    return layers


def _conv_stack(input_shape, conv_channels, fc_widths, num_classes, rng):
    c, h, w = input_shape
    layers = []
    for out_c in conv_channels:
        layers += [Conv2d(c, out_c, 3, rng), ReLU()]
        c = out_c
    layers.append(Flatten())
    dim = c * h * w
    for width in fc_widths:
        layers += [Dense(dim, width, rng), ReLU()]
        dim = width
    layers.append(Dense(dim, num_classes, rng))
    return layers


def build_architecture(name: str, input_shape, num_classes: int = 10,
                       seed: int = 0) -> Network:
    """Construct a named network with Kaiming-uniform weights."""
    rng = np.random.default_rng(seed)
    input_shape = tuple(input_shape)
    if name == "mlp-2x256":
        layers = _mlp(input_shape, [256, 256], num_classes, rng)
    elif name == "cnn-small":
        layers = _conv_stack(input_shape, [16, 32], [100], num_classes, rng)
    elif name == "cnn-large":
        layers = _conv_stack(input_shape, [32, 32, 64, 64], [512, 512], num_classes, rng)
    elif name == "vgg4":
        layers = _conv_stack(input_shape, [64, 64, 128, 128], [256, 256], num_classes, rng)
    else:
        raise ValueError(f"unknown architecture {name!r}; valid: {ARCHITECTURES}")
    return Network(layers, input_shape)
