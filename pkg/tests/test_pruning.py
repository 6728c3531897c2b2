import numpy as np
import pytest

from robustprune.autodiff import Conv2d, Dense, Flatten, Network, ReLU, forward_backward
from robustprune.data import Dataset, split_batches
from robustprune.errors import ConfigError
from robustprune.models import build_architecture
from robustprune.pruning import (
    ImportanceScores,
    PruneConfig,
    effective_weights,
    finalize_mask,
    finetune,
    kept_count,
    lwm_mask,
    masked_forward_ste,
    multi_step_lwm,
    prune_optimize,
    quantize_weights,
    random_score_init,
    scaled_init,
    structured_scaled_init,
    structured_scores,
    topk_flags,
)


def benign(net, x, y, weights=None, rng=None, epoch=0):
    return forward_backward(net, x, y, "cross_entropy", weights=weights)


def tiny_net(rng=None, in_dim=8, hidden=6, classes=3):
    rng = rng or np.random.default_rng(0)
    return Network([Dense(in_dim, hidden, rng), ReLU(),
                    Dense(hidden, classes, rng)], (in_dim,))


def tiny_stream(rng=None, n=32, in_dim=8, classes=3, batch=8):
    rng = rng or np.random.default_rng(1)
    ds = Dataset(rng.uniform(0, 1, (n, in_dim)).reshape(n, *([in_dim])),
                 rng.integers(0, classes, n))
    return split_batches(ds, batch, shuffle_seed=0)


# --- counting and masks ------------------------------------------------------

def test_kept_count_rounding():
    assert kept_count(100, 99) == 1
    assert kept_count(100, 90) == 10
    assert kept_count(10, 95) == 1   # floor(0.5 + 0.5) = 1
    assert kept_count(10, 94) == 1
    assert kept_count(3, 99.9) == 1  # never below one
    assert kept_count(7, 0) == 7


def test_topk_tie_keeps_lower_index():
    flags = topk_flags(np.array([0.5, 0.5, 0.5, 0.5]), 2)
    np.testing.assert_array_equal(flags, [True, True, False, False])


def test_lwm_hand_example():
    net = Network([Dense(4, 1)], (4,))
    net.layers[0].W.array[:] = [[0.1, -0.5, 0.3, 0.2]]
    mask = lwm_mask(net, 50.0)
    np.testing.assert_array_equal(mask.masks[0], [[0.0, 1.0, 1.0, 0.0]])
    assert mask.kept_counts()[0] == 2


def test_finalize_hand_example():
    scores = ImportanceScores({0: np.array([[0.5, -1.0, 0.25, 0.7]])})
    mask = finalize_mask(scores, 75.0)
    np.testing.assert_array_equal(mask.masks[0], [[0.0, 1.0, 0.0, 0.0]])


def test_scaled_init_hand_example():
    net = Network([Dense(6, 1)], (6,))
    net.layers[0].W.array[:] = 0.0
    net.layers[0].W.array[0, :3] = [0.2, -0.4, 0.1]
    scores = scaled_init(net, scaling_k=6.0)
    # sqrt(6/6) * w / 0.4
    np.testing.assert_allclose(scores.values[0][0, :3], [0.5, -1.0, 0.25], atol=1e-15)


def test_scaled_init_rejects_zero_layer():
    net = Network([Dense(3, 2)], (3,))
    net.layers[0].W.array[:] = 0.0
    with pytest.raises(ConfigError, match="all-zero"):
        scaled_init(net)


def test_scaled_init_matches_lwm_ranking():
    # |scaled scores| ranks exactly like |theta| per layer, so the masks agree
    net = tiny_net(np.random.default_rng(2))
    for p in (50.0, 90.0):
        a = finalize_mask(scaled_init(net), p)
        b = lwm_mask(net, p)
        for i in a.masks:
            np.testing.assert_array_equal(a.masks[i], b.masks[i])


def test_random_score_init_kinds_and_bounds():
    net = tiny_net(np.random.default_rng(3))
    rng = np.random.default_rng(0)
    fan_in = 8
    ku = random_score_init(net, "kaiming-uniform", rng)
    assert np.abs(ku.values[0]).max() <= np.sqrt(6.0 / fan_in)
    xu = random_score_init(net, "xavier-uniform", np.random.default_rng(1))
    assert np.abs(xu.values[0]).max() <= np.sqrt(6.0 / (8 + 6))
    for kind in ("xavier-normal", "kaiming-normal"):
        s = random_score_init(net, kind, np.random.default_rng(2))
        assert s.values[0].shape == (6, 8)
    with pytest.raises(ConfigError):
        random_score_init(net, "orthogonal")


def test_effective_weights_hand_example():
    net = Network([Dense(2, 1)], (2,))
    net.layers[0].W.array[:] = [[1.0, 2.0]]
    scores = ImportanceScores({0: np.array([[0.1, 0.9]])})
    mask = finalize_mask(scores, 50.0)
    w = effective_weights(net, mask)
    np.testing.assert_array_equal(w[0], [[0.0, 2.0]])


def test_mask_is_deterministic():
    net = tiny_net(np.random.default_rng(4))
    scores = scaled_init(net)
    a = finalize_mask(scores, 90.0)
    b = finalize_mask(scores, 90.0)
    for i in a.masks:
        np.testing.assert_array_equal(a.masks[i], b.masks[i])


def test_exact_per_layer_sparsity():
    net = build_architecture("cnn-small", (1, 8, 8), seed=5)
    for p in (50.0, 90.0, 95.0, 99.0):
        mask = finalize_mask(scaled_init(net), p)
        for i, m in mask.masks.items():
            assert int(m.sum()) == kept_count(m.size, p)


def test_ratio_validation():
    net = tiny_net()
    with pytest.raises(ConfigError):
        lwm_mask(net, 100.0)
    with pytest.raises(ConfigError):
        finalize_mask(scaled_init(net), -1.0)
    with pytest.raises(ConfigError):
        PruneConfig(ratio=50.0, granularity="channel")
    with pytest.raises(ConfigError):
        PruneConfig(ratio=50.0, scaling_k=0.0)


# --- straight-through optimization -------------------------------------------

def test_ste_gradient_matches_theta_times_weight_fd():
    # dL/ds_i should equal theta_i * dL/dw_i with the mask held fixed
    rng = np.random.default_rng(6)
    net = tiny_net(rng)
    # nonzero biases keep masked-out units off the relu kink, where the
    # finite-difference oracle is one-sided
    for i in net.prunable_indices():
        net.layers[i].b.array[:] = rng.normal(0.0, 0.1, net.layers[i].b.shape)
    x = rng.uniform(0, 1, (5, 8))
    y = rng.integers(0, 3, 5)
    scores = scaled_init(net)
    p = 50.0
    out, hook = masked_forward_ste(net, scores, p, x)
    from robustprune.autodiff import cross_entropy
    _, dout = cross_entropy(out, y)
    sgrads = hook(dout)

    mask = finalize_mask(scores, p)
    weights = effective_weights(net, mask)
    h = 1e-6
    for i in scores.values:
        theta = net.layers[i].W.array
        flat_w = weights[i].reshape(-1)
        flat_t = theta.reshape(-1)
        for j in range(0, flat_w.size, 5):
            # perturb w_j regardless of the mask: the rule flows to masked scores too
            orig = flat_w[j]
            flat_w[j] = orig + h
            hi = forward_backward(net, x, y, weights=weights).loss
            flat_w[j] = orig - h
            lo = forward_backward(net, x, y, weights=weights).loss
            flat_w[j] = orig
            dw = (hi - lo) / (2 * h)
            assert sgrads[i].reshape(-1)[j] == pytest.approx(flat_t[j] * dw, abs=1e-6)


def test_prune_optimize_leaves_theta_bit_identical():
    rng = np.random.default_rng(7)
    net = tiny_net(rng)
    before = {i: net.layers[i].W.array.copy() for i in net.prunable_indices()}
    scores = scaled_init(net)
    cfg = PruneConfig(ratio=90.0, epochs=2, lr=0.05)
    stream = tiny_stream()
    scores, log = prune_optimize(net, scores, cfg, stream, objective=benign)
    assert len(log) == 2
    assert all("loss" in e and "score_grad_norm" in e for e in log)
    for i, w in before.items():
        assert np.array_equal(net.layers[i].W.array, w)


def test_prune_optimize_zero_epochs_is_identity():
    net = tiny_net(np.random.default_rng(8))
    scores = scaled_init(net)
    snapshot = scores.copy()
    out, log = prune_optimize(net, scores, PruneConfig(ratio=90.0, epochs=0),
                              tiny_stream(), objective=benign)
    assert log == []
    for i in snapshot.values:
        np.testing.assert_array_equal(out.values[i], snapshot.values[i])


def test_prune_optimize_moves_scores_and_reduces_loss():
    rng = np.random.default_rng(9)
    net = tiny_net(rng)
    scores = scaled_init(net)
    snapshot = scores.copy()
    data_rng = np.random.default_rng(10)
    x = data_rng.uniform(0, 1, (96, 8))
    y = x[:, :3].argmax(axis=1)  # learnable labels
    stream = split_batches(Dataset(x, y), 16, shuffle_seed=0)
    out, log = prune_optimize(net, scores, PruneConfig(ratio=50.0, epochs=10, lr=0.2),
                              stream, objective=benign)
    assert any(not np.array_equal(out.values[i], snapshot.values[i])
               for i in out.values)
    assert log[-1]["loss"] < log[0]["loss"]


def test_score_rescale_leaves_mask_invariant():
    net = tiny_net(np.random.default_rng(11))
    scores = scaled_init(net)
    doubled = ImportanceScores({i: 2.0 * v for i, v in scores.values.items()},
                               scores.granularity, dict(scores.weight_shapes))
    a = finalize_mask(scores, 90.0)
    b = finalize_mask(doubled, 90.0)
    for i in a.masks:
        np.testing.assert_array_equal(a.masks[i], b.masks[i])


# --- fine-tuning with a frozen mask -------------------------------------------

def test_finetune_keeps_masked_weights_exactly_zero():
    rng = np.random.default_rng(12)
    net = tiny_net(rng)
    mask = lwm_mask(net, 80.0)
    stream = tiny_stream(np.random.default_rng(13))
    finetune(net, mask, benign, stream, epochs=3, lr=0.1)
    for i, m in mask.masks.items():
        w = net.layers[i].W.array
        assert float(np.abs(w * (1.0 - m)).sum()) == 0.0
        assert np.any(w * m != 0.0)


def test_finetune_mask_pattern_frozen():
    rng = np.random.default_rng(14)
    net = tiny_net(rng)
    mask = lwm_mask(net, 70.0)
    pattern = {i: m.copy() for i, m in mask.masks.items()}
    finetune(net, mask, benign, tiny_stream(), epochs=2, lr=0.05)
    for i, m in mask.masks.items():
        np.testing.assert_array_equal(m, pattern[i])
        np.testing.assert_array_equal(net.layers[i].W.array != 0.0, m == 1.0)


def test_finetune_shape_mismatch_rejected():
    net = tiny_net(np.random.default_rng(15))
    bad = lwm_mask(net, 50.0)
    bad.masks[0] = bad.masks[0][:, :4]
    with pytest.raises(ConfigError, match="mask"):
        finetune(net, bad, benign, tiny_stream(), epochs=1)


def test_multi_step_lwm_counts_and_schedule():
    rng = np.random.default_rng(16)
    net = tiny_net(rng)
    stream = tiny_stream(np.random.default_rng(17))
    net, mask = multi_step_lwm(net, [50.0, 75.0, 90.0], benign, stream,
                               epochs_per_step=1, lr=0.05)
    for i, m in mask.masks.items():
        assert int(m.sum()) == kept_count(m.size, 90.0)
    with pytest.raises(ConfigError, match="increasing"):
        multi_step_lwm(net, [50.0, 50.0], benign, stream, 1)


# --- structured pruning -------------------------------------------------------

def conv_net(rng=None):
    rng = rng or np.random.default_rng(18)
    return Network([Conv2d(1, 8, 3, rng), ReLU(), Flatten(),
                    Dense(8 * 16, 3, rng)], (1, 4, 4))


def test_structured_mask_whole_filters():
    net = conv_net()
    mask = structured_scores(net, 50.0)
    m = mask.masks[2] if 2 in mask.masks else mask.masks[0]
    per_filter = m.reshape(m.shape[0], -1)
    assert np.all((per_filter == per_filter[:, :1]))  # each filter all-0 or all-1
    kept_filters = int(per_filter[:, 0].sum())
    assert kept_filters == kept_count(8, 50.0)


def test_structured_keeps_largest_l2_filters():
    net = conv_net(np.random.default_rng(19))
    w = net.layers[0].W.array
    norms = np.sqrt((w ** 2).reshape(8, -1).sum(axis=1))
    mask = structured_scores(net, 75.0)
    kept = np.where(mask.masks[0].reshape(8, -1)[:, 0] == 1.0)[0]
    expected = np.argsort(-norms, kind="stable")[:kept_count(8, 75.0)]
    np.testing.assert_array_equal(np.sort(kept), np.sort(expected))


def test_structured_requires_conv():
    net = tiny_net()
    with pytest.raises(ConfigError, match="conv"):
        structured_scaled_init(net)


def test_structured_ste_granularity():
    net = conv_net(np.random.default_rng(20))
    scores = structured_scaled_init(net)
    assert scores.granularity == "filter"
    assert scores.values[0].shape == (8,)
    rng = np.random.default_rng(21)
    x = rng.uniform(0, 1, (3, 1, 4, 4))
    y = rng.integers(0, 3, 3)
    out, hook = masked_forward_ste(net, scores, 50.0, x)
    from robustprune.autodiff import cross_entropy
    _, dout = cross_entropy(out, y)
    sgrads = hook(dout)
    assert sgrads[0].shape == (8,)


# --- quantization -------------------------------------------------------------

def test_quantize_hand_example():
    net = Network([Dense(2, 1)], (2,))
    net.layers[0].W.array[:] = [[-1.0, 0.5]]
    q, report = quantize_weights(net, 8)
    delta = 1.0 / 127.0
    assert report[0]["delta"] == pytest.approx(delta)
    assert q.layers[0].W.array[0, 0] == pytest.approx(-1.0, abs=1e-15)
    assert q.layers[0].W.array[0, 1] == pytest.approx(64.0 * delta, abs=1e-15)
    # original untouched
    assert net.layers[0].W.array[0, 1] == 0.5


def test_quantize_error_bound_and_zeros():
    rng = np.random.default_rng(22)
    net = tiny_net(rng)
    net.layers[0].W.array[0, :3] = 0.0
    q, report = quantize_weights(net, 8)
    for i in net.prunable_indices():
        w = net.layers[i].W.array
        qw = q.layers[i].W.array
        delta = np.abs(w).max() / 127.0
        assert np.abs(qw - w).max() <= delta / 2.0 + 1e-15
        assert report[i]["max_error"] <= report[i]["delta"] / 2.0 + 1e-15
    assert np.all(q.layers[0].W.array[0, :3] == 0.0)


def test_quantize_bits_bound():
    net = tiny_net()
    with pytest.raises(ConfigError):
        quantize_weights(net, 1)
    with pytest.raises(ConfigError):
        quantize_weights(net, 17)
    q2, _ = quantize_weights(net, 2)
    for i in net.prunable_indices():
        assert len(np.unique(q2.layers[i].W.array)) <= 3  # -d, 0, +d
