"""Certify single inputs of a noise-trained model by randomized smoothing.

Trains with Gaussian-noise augmentation, then certifies a handful of
validation digits: each gets a predicted class, a lower confidence bound
on the top-class probability, and an l2 radius (or an abstention).
"""

import numpy as np

from robustprune import (
    SmoothingConfig,
    build_architecture,
    load_digits_dataset,
    make_objective,
    smoothing_certify,
    split_batches,
    train,
    train_val_split,
)

full = load_digits_dataset(8)
train_set, val_set = train_val_split(full, seed=0)
net = build_architecture("mlp-2x256", full.input_shape, seed=0)

sigma = 0.25
objective = make_objective("smoothing", sigma=sigma)
rng = np.random.default_rng(0)
train(net, lambda n, x, y, rng=rng, epoch=0: objective(n, x, y, rng=rng),
      stream := split_batches(train_set, 128, shuffle_seed=0), epochs=3, lr=0.1)

cfg = SmoothingConfig(sigma=sigma, n0=100, n=1000, alpha=1e-3, l2_budget=0.25)
for i in range(5):
    res = smoothing_certify(net, val_set.images[i], cfg,
                            rng=np.random.default_rng(i))
    label = int(val_set.labels[i])
    if res.abstained:
        print(f"example {i}: label {label}, abstained (p_lower {res.p_lower:.3f})")
    else:
        print(f"example {i}: label {label}, predicted {res.prediction}, "
              f"p_lower {res.p_lower:.3f}, radius {res.radius:.3f}, "
              f"certified at {cfg.l2_budget:.3f}: {res.certified}")
