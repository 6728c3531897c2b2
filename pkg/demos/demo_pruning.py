"""Prune a pretrained network to 90% sparsity with learned importance scores.

Shows the full mechanism at desk scale: scaled score initialization (whose
top-k mask equals magnitude pruning exactly), straight-through score
optimization, mask finalization, fine-tuning of the kept weights, and an
8-bit quantization of the result.
"""

import numpy as np

from robustprune import (
    build_architecture,
    evaluate_metrics,
    finalize_mask,
    finetune,
    kept_count,
    load_digits_dataset,
    lwm_mask,
    make_objective,
    prune_optimize,
    quantize_weights,
    scaled_init,
    split_batches,
    train,
    train_val_split,
)
from robustprune.pruning import PruneConfig

full = load_digits_dataset(8)
train_set, val_set = train_val_split(full, seed=0)
net = build_architecture("mlp-2x256", full.input_shape, seed=0)
stream = split_batches(train_set, 128, shuffle_seed=0)
objective = make_objective("benign")
wrapped = lambda n, x, y, weights=None, rng=None, epoch=0: objective(
    n, x, y, weights=weights)

train(net, lambda n, x, y, rng=None, epoch=0: objective(n, x, y),
      stream, epochs=4, lr=0.1)
dense_acc = evaluate_metrics(net, val_set, ["benign"])["benign"]
print(f"dense accuracy after pretraining: {dense_acc:.3f}")

p = 90.0
scores = scaled_init(net, scaling_k=6.0)
initial = finalize_mask(scores, p)
magnitude = lwm_mask(net, p)
same = all(np.array_equal(initial.masks[i], magnitude.masks[i])
           for i in initial.masks)
print(f"scaled-init mask equals the magnitude mask: {same}")

scores, log = prune_optimize(net, scores, PruneConfig(ratio=p, epochs=5, lr=0.1),
                             stream, objective=wrapped)
mask = finalize_mask(scores, p)
moved = sum(int((mask.masks[i] != initial.masks[i]).sum()) for i in mask.masks)
print(f"score search moved {moved} mask entries; "
      f"last score-loss {log[-1]['loss']:.3f}")

for i, m in mask.masks.items():
    assert int(m.sum()) == kept_count(m.size, p)

finetune(net, mask, lambda n, x, y, rng=None, epoch=0: objective(n, x, y),
         stream, epochs=4, lr=0.01)
sparse_acc = evaluate_metrics(net, val_set, ["benign"])["benign"]
kept = sum(int(m.sum()) for m in mask.masks.values())
total = sum(m.size for m in mask.masks.values())
print(f"accuracy at {p:.0f}% pruning ({kept}/{total} weights): {sparse_acc:.3f}")

quant, report = quantize_weights(net, 8)
q_acc = evaluate_metrics(quant, val_set, ["benign"])["benign"]
worst = max(r["max_error"] for r in report.values())
print(f"8-bit quantized accuracy: {q_acc:.3f} (max weight error {worst:.2e})")
