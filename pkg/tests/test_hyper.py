# Copyright (c) 2026 rkwithb (https://github.com/rkwithb)
# Licensed under Apache License 2.0 (Non-Commercial Use Only)
# Disclaimer: Use at your own risk. The author is not responsible for any damages.

import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from core.errors import HyperError
from core.geom import SdfGrid
from core.hyper import (LabeledSet, MainNetEvaluator, MainNetSpec, build_main_graph, build_training_graph,
                        confusion_matrix, default_main_spec, evaluate, hyper_forward, hyper_forward_batch,
                        init_main_params, iou_and_confusion, main_forward, mse, param_count, rwmse,
                        split_indices, train, train_grid_search)
from core.nn import Graph
from core.reach import StateGrid
from helpers import tiny_labeled_set, tiny_train_config


# =============================================================================
# Main network
# =============================================================================

def test_default_parameter_counts():
    assert param_count(default_main_spec(3)) == 3601
    assert param_count(default_main_spec(5)) == 3665


def test_spec_validation():
    with pytest.raises(HyperError):
        MainNetSpec(3, (8, 8), ("sine",))
    with pytest.raises(HyperError):
        MainNetSpec(3, (8,), ("tanh",))


def test_single_and_batched_forward_agree(rng):
    spec = default_main_spec(3)
    params = np.stack([init_main_params(spec, rng) for _ in range(3)])
    states = rng.normal(size=(7, 3))
    batched = main_forward(spec, params, states)
    assert batched.shape == (3, 7)
    for b in range(3):
        assert_allclose(batched[b], main_forward(spec, params[b], states), rtol=0, atol=1e-12)
    per_sample = main_forward(spec, params, np.broadcast_to(states, (3, 7, 3)))
    assert_allclose(per_sample, batched, rtol=0, atol=1e-12)


def test_forward_rejects_wrong_lengths(rng):
    spec = default_main_spec(3)
    with pytest.raises(HyperError, match="length 10"):
        main_forward(spec, np.zeros(10), np.zeros((1, 3)))
    with pytest.raises(HyperError):
        main_forward(spec, init_main_params(spec, rng), np.zeros((1, 5)))


def test_graph_matches_numpy_forward(rng):
    spec = default_main_spec(5, (8, 8, 4), 2)
    params = np.stack([init_main_params(spec, rng) for _ in range(2)])
    states = rng.normal(size=(6, 5))
    g = Graph()
    p = g.input("params")
    x = g.input("x")
    out = build_main_graph(g, spec, p, x, batched=True)
    (value,) = g.forward({"params": params, "x": states}, [out])
    assert_allclose(value[..., 0], main_forward(spec, params, states), atol=1e-12)


def test_evaluator_gradient(rng):
    spec = default_main_spec(3)
    evaluator = MainNetEvaluator(spec, init_main_params(spec, rng))
    h = 1e-6
    for _ in range(5):
        x = rng.normal(size=3)
        value, grad = evaluator.value_and_grad(x)
        assert value == pytest.approx(evaluator.value(x), abs=1e-12)
        for d in range(3):
            e = np.zeros(3)
            e[d] = h
            fd = (evaluator.value(x + e) - evaluator.value(x - e)) / (2 * h)
            assert grad[d] == pytest.approx(fd, abs=1e-6)


def test_sine_layers_are_not_linear(rng):
    spec = default_main_spec(3)
    params = init_main_params(spec, rng)
    w0 = params[:spec.hidden[0] * 3]
    assert np.abs(w0).max() > 0.2


# =============================================================================
# Hypernetwork
# =============================================================================

def test_hyper_forward_shape_and_determinism(tiny_checkpoint, disc_sdf):
    sdf = SdfGrid(20, 20, 0.12, (-1.2, -1.2), disc_sdf.values[15:35, 15:35])
    a = hyper_forward(tiny_checkpoint, sdf)
    b = hyper_forward(tiny_checkpoint, sdf)
    assert a.shape == (tiny_checkpoint.param_count,)
    assert_array_equal(a, b)


def test_initial_output_stays_near_head_bias(tiny_checkpoint, rng):
    images = rng.uniform(-1.0, 2.0, size=(2, 20, 20))
    params = hyper_forward_batch(tiny_checkpoint, images)
    assert np.abs(params - tiny_checkpoint.weights["head_b"]).max() < 0.5


def test_hyper_forward_rejects_other_geometry(tiny_checkpoint):
    wrong_size = SdfGrid(21, 20, 0.12, (0.0, 0.0), np.zeros((20, 21)))
    wrong_res = SdfGrid(20, 20, 0.1, (0.0, 0.0), np.zeros((20, 20)))
    for sdf in (wrong_size, wrong_res):
        with pytest.raises(HyperError, match="does not match checkpoint"):
            hyper_forward(tiny_checkpoint, sdf)


def test_training_graph_gradient(tiny_checkpoint, tiny_data):
    g, loss = build_training_graph(tiny_checkpoint.hyper_spec, tiny_checkpoint.main_spec)
    states = tiny_data.grid.points()[:12]
    target = tiny_data.labels[:2, :12]
    feeds = {"sdf": tiny_data.sdf[:2, None], "states": states, "target": target,
             "weight": 1.0 + 5.0 * np.exp(-10.0 * target ** 2), **tiny_checkpoint.weights}
    g.forward(feeds, [loss])
    grads = g.backward(loss, wrt=g.params())
    h = 1e-6
    for name in ("conv0_w", "fc0_b", "head_b"):
        flat = feeds[name].ravel()
        for index in (0, flat.size // 2, flat.size - 1):
            shifted = []
            for sign in (1.0, -1.0):
                value = flat.copy()
                value[index] += sign * h
                (result,) = g.forward({**feeds, name: value.reshape(feeds[name].shape)}, [loss])
                shifted.append(float(result))
            fd = (shifted[0] - shifted[1]) / (2 * h)
            assert grads[name].ravel()[index] == pytest.approx(fd, rel=1e-4, abs=1e-8)


# =============================================================================
# Losses and metrics
# =============================================================================

def test_rwmse_weight_at_zero_level_set():
    assert rwmse([1.0], [0.0], alpha=1000.0, beta=10.0) == pytest.approx(1001.0)
    assert rwmse([0.0, 0.0], [2.0, 2.0], alpha=0.0) == pytest.approx(mse([0.0, 0.0], [2.0, 2.0]))


def test_rwmse_far_from_boundary_is_plain_mse(rng):
    target = rng.uniform(5.0, 6.0, size=(3, 10))
    pred = target + rng.normal(size=(3, 10))
    assert rwmse(pred, target) == pytest.approx(mse(pred, target), rel=1e-9)


def test_loss_shape_mismatch():
    with pytest.raises(HyperError):
        rwmse(np.zeros(3), np.zeros(4))
    with pytest.raises(HyperError):
        mse(np.zeros((2, 3)), np.zeros((3, 2)))


def test_confusion_and_iou():
    target = np.array([1.0, 1.0, -1.0, -1.0, 0.0])
    pred = np.array([1.0, -1.0, 1.0, -1.0, -0.5])
    confusion = confusion_matrix(pred, target)
    assert_array_equal(confusion, [[1, 1], [1, 2]])
    metrics = iou_and_confusion(pred, target)
    assert metrics.iou == pytest.approx(1 / 3)
    assert (metrics.tp, metrics.fn, metrics.fp, metrics.tn) == (1, 1, 1, 2)


def test_iou_of_two_empty_safe_sets_is_one():
    assert iou_and_confusion(-np.ones(4), -np.ones(4)).iou == 1.0


def test_split_indices():
    train_idx, val_idx = split_indices(10, seed=3)
    assert len(val_idx) == 2 and len(train_idx) == 8
    assert not set(train_idx) & set(val_idx)
    again = split_indices(10, seed=3)
    assert_array_equal(again[0], train_idx)
    single = split_indices(1, seed=0)
    assert_array_equal(single[0], single[1])
    with pytest.raises(HyperError):
        split_indices(0, seed=0)


# =============================================================================
# Training
# =============================================================================

def test_labeled_set_checks_label_width(tiny_grid):
    with pytest.raises(HyperError):
        LabeledSet(np.zeros((2, 20, 20)), np.zeros((2, 7)), tiny_grid, "dubins", 0.12)


def test_train_is_deterministic(tiny_data):
    config = tiny_train_config()
    a = train(tiny_data, config)
    b = train(tiny_data, config)
    assert len(a.history) == config.epochs
    for name in a.checkpoint.weights:
        assert_array_equal(a.checkpoint.weights[name], b.checkpoint.weights[name])
    assert np.isfinite(a.first_batch_loss)


def test_progress_counts_batches(tiny_data):
    calls = []
    train(tiny_data, tiny_train_config(epochs=3), on_progress=lambda i, n: calls.append((i, n)))
    assert calls[-1] == (3, 3)


@pytest.mark.slow
def test_training_reduces_loss(tiny_grid):
    data = tiny_labeled_set(tiny_grid, count=6, seed=1)
    result = train(data, tiny_train_config(loss="mse", epochs=100, lr=1e-2, batch=5))
    assert result.history[-1].train_loss < 0.5 * result.first_batch_loss


def half_plane_set(grid: StateGrid) -> LabeledSet:
    """One window whose label is V = x - 0.1, so no grid node sits closer than 0.1 to the boundary."""
    data = tiny_labeled_set(grid, count=1)
    labels = grid.points()[:, 0][None, :] - 0.1
    return dataclasses.replace(data, labels=labels)


@pytest.mark.slow
def test_single_window_is_overfit(tiny_grid):
    data = half_plane_set(tiny_grid)
    result = train(data, tiny_train_config(epochs=400, lr=1e-2, batch=1))
    assert evaluate(result.checkpoint, data, "all").iou >= 0.98


@pytest.mark.slow
def test_rwmse_matches_or_beats_mse_iou(tiny_grid):
    data = half_plane_set(tiny_grid)
    config = tiny_train_config(epochs=400, lr=1e-2, batch=1)
    weighted = train(data, config.replace(loss="rwmse"), init_seed=7)
    plain = train(data, config.replace(loss="mse"), init_seed=7)
    assert weighted.history[-1].val_iou >= plain.history[-1].val_iou
    assert weighted.history[-1].val_iou >= 0.98


def test_train_rejects_mismatched_model(tiny_data):
    wrong = LabeledSet(tiny_data.sdf, tiny_data.labels, tiny_data.grid, "unicycle2", 0.12)
    with pytest.raises(HyperError):
        train(wrong, tiny_train_config())


def test_evaluate_reproduces_split(tiny_data):
    result = train(tiny_data, tiny_train_config())
    metrics = evaluate(result.checkpoint, tiny_data, "val")
    assert metrics.iou == pytest.approx(result.history[-1].val_iou)
    assert int(evaluate(result.checkpoint, tiny_data, "all").confusion.sum()) == 3 * tiny_data.grid.size
    with pytest.raises(HyperError):
        evaluate(result.checkpoint, tiny_data, "test")


def test_evaluate_rejects_other_state_grid(tiny_checkpoint, tiny_data):
    other = StateGrid((-1.0, -1.0, -np.pi), (1.0, 1.0, np.pi), (5, 5, 4), (False, False, True))
    data = tiny_labeled_set(other)
    with pytest.raises(HyperError, match="state grid"):
        evaluate(tiny_checkpoint, data)


def test_grid_search_reports_every_pair(tiny_data):
    results = train_grid_search(tiny_data, tiny_train_config(epochs=1), [0.0, 10.0], [5.0])
    assert [(r["alpha"], r["beta"]) for r in results] == [(0.0, 5.0), (10.0, 5.0)]
    assert all(0.0 <= r["val_iou"] <= 1.0 for r in results)
