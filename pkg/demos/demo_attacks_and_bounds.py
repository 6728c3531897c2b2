"""Attack a small trained model and bound it with interval propagation.

Trains a dense network on the 8x8 digits for a couple of epochs, then
reports benign accuracy, accuracy under a multi-restart PGD attack, and
the interval-certified accuracy at a small epsilon.
"""

import numpy as np

from robustprune import (
    AttackConfig,
    build_architecture,
    evaluate_metrics,
    load_digits_dataset,
    make_objective,
    split_batches,
    train,
    train_val_split,
)

full = load_digits_dataset(8)
train_set, val_set = train_val_split(full, seed=0)
net = build_architecture("mlp-2x256", full.input_shape, seed=0)

stream = split_batches(train_set, 128, shuffle_seed=0)
objective = make_objective("benign")
log = train(net, lambda n, x, y, rng=None, epoch=0: objective(n, x, y),
            stream, epochs=3, lr=0.1)
print(f"training loss per epoch: {[round(e['loss'], 3) for e in log]}")

attack = AttackConfig(epsilon=0.05, steps=20, restarts=3)
metrics = evaluate_metrics(net, val_set, ["benign", "era", "vra_t"],
                           attack=attack, ibp_epsilon=1.0 / 255.0)
print(f"benign accuracy:            {metrics['benign']:.3f}")
print(f"robust accuracy (PGD):      {metrics['era']:.3f}")
print(f"verified accuracy (bounds): {metrics['vra_t']:.3f}")
