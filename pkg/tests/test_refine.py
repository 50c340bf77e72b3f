from __future__ import annotations

import math

import numpy as np
import pytest

from relfine.errors import FormatError
from relfine.grid import make_probability_map
from relfine.logic import SpatialLossConfig
from relfine.refine import (
    AdamState,
    RefineConfig,
    adam_step,
    evaluate_objective,
    fidelity_loss,
    refine,
)
from relfine.relations import empty_triplet_set
from relfine.scenes import generate_scene, random_grid_spec
from relfine.state import argmax_labels, init_state

# The regression-pinned fixture scene: everything downstream of this seed is
# frozen, so golden values below change only when the algorithm does.
FIXTURE_SEED = 42


def fixture_scene():
    return generate_scene(random_grid_spec(FIXTURE_SEED, n_categories=2, noise_sigma=0.15, confusion_strength=0.5))


# --------------------------------------------------------------------------
# state


def test_init_state_round_trips_normalized_maps():
    maps = {
        "a": make_probability_map(1, 2, [0.3, 0.8]),
        "b": make_probability_map(1, 2, [0.7, 0.2]),
    }
    state = init_state(maps)
    assert state.probs[0, 0].tolist() == pytest.approx([0.3, 0.8], abs=1e-6)
    assert state.probs[1, 0].tolist() == pytest.approx([0.7, 0.2], abs=1e-6)


def test_init_state_symmetric_pixel():
    maps = {
        "a": make_probability_map(1, 1, [0.5]),
        "b": make_probability_map(1, 1, [0.5]),
    }
    state = init_state(maps)
    assert state.probs[:, 0, 0].tolist() == pytest.approx([0.5, 0.5])


def test_init_state_rejects_mismatched_shapes():
    maps = {
        "a": make_probability_map(1, 2, [0.5, 0.5]),
        "b": make_probability_map(2, 1, [0.5, 0.5]),
    }
    with pytest.raises(FormatError, match="disagree on shape"):
        init_state(maps)


def test_init_state_clamps_zeros():
    maps = {
        "a": make_probability_map(1, 1, [0.0]),
        "b": make_probability_map(1, 1, [1.0]),
    }
    state = init_state(maps)
    assert state.probs[0, 0, 0] > 0.0
    assert state.probs.sum(axis=0) == pytest.approx(1.0)


def test_argmax_labels_examples_and_tie_break():
    state = init_state({
        "a": make_probability_map(1, 1, [0.8]),
        "b": make_probability_map(1, 1, [0.2]),
    })
    assert argmax_labels(state).labels.tolist() == [[0]]
    state = init_state({
        "a": make_probability_map(1, 1, [0.5]),
        "b": make_probability_map(1, 1, [0.5]),
    })
    assert argmax_labels(state).labels.tolist() == [[0]]  # tie -> lowest index
    state = init_state({
        "a": make_probability_map(1, 1, [0.1]),
        "b": make_probability_map(1, 1, [0.3]),
        "c": make_probability_map(1, 1, [0.6]),
    })
    assert argmax_labels(state).labels.tolist() == [[2]]


def test_argmax_invariant_to_positive_scaling():
    rng = np.random.default_rng(4)
    base = rng.random((3, 4, 5)) * 0.85 + 0.05
    scale = rng.random((4, 5)) * 0.9 + 0.1
    plain = init_state({f"c{i}": make_probability_map(4, 5, base[i].ravel()) for i in range(3)})
    scaled_values = base * scale
    scaled = init_state({f"c{i}": make_probability_map(4, 5, scaled_values[i].ravel()) for i in range(3)})
    assert argmax_labels(plain).labels.tolist() == argmax_labels(scaled).labels.tolist()


# --------------------------------------------------------------------------
# fidelity


def test_fidelity_at_target_equals_entropy():
    maps = {
        "a": make_probability_map(1, 2, [0.3, 0.5]),
        "b": make_probability_map(1, 2, [0.7, 0.5]),
    }
    state = init_state(maps)
    loss, grad = fidelity_loss(state, state.probs)
    entropy = -(state.probs * np.log(state.probs)).sum()
    assert loss == pytest.approx(entropy, rel=1e-12)
    assert np.abs(grad).max() < 1e-12


def test_fidelity_hand_example():
    state = init_state({
        "a": make_probability_map(1, 1, [0.9]),
        "b": make_probability_map(1, 1, [0.1]),
    })
    targets = np.array([[[0.5]], [[0.5]]])
    loss, grad = fidelity_loss(state, targets)
    assert loss == pytest.approx(-0.5 * math.log(0.9) - 0.5 * math.log(0.1), rel=1e-6)
    assert loss == pytest.approx(1.2040, abs=2e-4)
    assert grad[:, 0, 0].tolist() == pytest.approx([0.4, -0.4], abs=1e-6)


def test_fidelity_mean_reduction_scales_by_pixels():
    maps = {
        "a": make_probability_map(2, 2, [0.25, 0.5, 0.75, 0.5]),
        "b": make_probability_map(2, 2, [0.75, 0.5, 0.25, 0.5]),
    }
    state = init_state(maps)
    q = np.full((2, 2, 2), 0.5)
    loss_sum, grad_sum = fidelity_loss(state, q, reduction="sum")
    loss_mean, grad_mean = fidelity_loss(state, q, reduction="mean")
    assert loss_mean == pytest.approx(loss_sum / 4)
    assert np.allclose(grad_mean, grad_sum / 4, rtol=0, atol=1e-15)


# --------------------------------------------------------------------------
# adam


def test_adam_zero_gradient_keeps_params():
    params = np.array([1.0, -2.0, 3.0])
    moments = AdamState.zeros_like(params)
    cfg = RefineConfig()
    for t in range(1, 6):
        params, moments = adam_step(params, np.zeros(3), moments, t, cfg)
    assert params.tolist() == [1.0, -2.0, 3.0]


def test_adam_first_step_is_learning_rate_sized():
    # Hand evaluation of the bias-corrected first step: m_hat = g,
    # v_hat = g^2, update = -lr * g / (|g| + eps) ~ -lr * sign(g).
    cfg = RefineConfig(learning_rate=0.01)
    for g in (0.5, -3.0, 1e-3):
        params = np.array([0.0])
        updated, _ = adam_step(params, np.array([g]), AdamState.zeros_like(params), 1, cfg)
        expected = -cfg.learning_rate * g / (abs(g) + cfg.adam_eps)
        assert updated[0] == pytest.approx(expected, rel=1e-12)
        assert updated[0] == pytest.approx(-math.copysign(cfg.learning_rate, g), rel=1e-4)


def test_adam_moments_decay_after_gradients_cease():
    cfg = RefineConfig()
    params = np.array([0.0])
    moments = AdamState.zeros_like(params)
    params, moments = adam_step(params, np.array([1.0]), moments, 1, cfg)
    m1, v1 = abs(moments.m[0]), abs(moments.v[0])
    for t in range(2, 12):
        params, moments = adam_step(params, np.array([0.0]), moments, t, cfg)
    assert abs(moments.m[0]) < m1
    assert abs(moments.v[0]) < v1
    assert abs(moments.m[0]) == pytest.approx(m1 * 0.9**10, rel=1e-9)


def test_adam_rejects_bad_step_index():
    params = np.zeros(1)
    with pytest.raises(FormatError):
        adam_step(params, params, AdamState.zeros_like(params), 0, RefineConfig())


# --------------------------------------------------------------------------
# refine


def test_refine_zero_steps_returns_initial_state():
    scene = fixture_scene()
    state, trace = refine(scene.init_probs, scene.gt_triplets, RefineConfig(steps=0))
    expected = init_state(scene.init_probs)
    assert np.array_equal(state.probs, expected.probs)
    assert len(trace) == 0


def test_refine_alpha_zero_matches_baseline_and_ignores_triplets():
    scene = fixture_scene()
    cfg = RefineConfig(alpha=0.0)
    with_triplets, trace = refine(scene.init_probs, scene.gt_triplets, cfg)
    without, _ = refine(scene.init_probs, empty_triplet_set(scene.categories), cfg)
    assert np.array_equal(with_triplets.probs, without.probs)
    # Spatial loss is still recorded on the trace.
    assert all(r.spatial > 0 for r in trace.records)
    # Fidelity starts at its own minimum, so the baseline never moves.
    expected = init_state(scene.init_probs)
    assert np.array_equal(with_triplets.probs, expected.probs)


def test_refine_trace_length_and_simplex():
    scene = fixture_scene()
    state, trace = refine(scene.init_probs, scene.gt_triplets)
    assert len(trace) == RefineConfig().steps
    sums = state.probs.sum(axis=0)
    assert np.abs(sums - 1.0).max() < 1e-6


def test_refine_deterministic_bit_identical():
    scene = fixture_scene()
    a_state, a_trace = refine(scene.init_probs, scene.gt_triplets)
    b_state, b_trace = refine(scene.init_probs, scene.gt_triplets)
    assert np.array_equal(a_state.logits, b_state.logits)
    assert np.array_equal(a_state.probs, b_state.probs)
    assert a_trace.to_list() == b_trace.to_list()


def test_refine_spatial_loss_strictly_decreases_early():
    scene = fixture_scene()
    _, trace = refine(scene.init_probs, scene.gt_triplets)
    spatial = [r.spatial for r in trace.records[:5]]
    assert all(b < a for a, b in zip(spatial, spatial[1:]))


def test_refine_final_total_below_initial_total():
    for seed in (FIXTURE_SEED, 7, 19):
        scene = generate_scene(random_grid_spec(seed, n_categories=3, noise_sigma=0.15, confusion_strength=0.5))
        cfg = RefineConfig()
        loss_cfg = SpatialLossConfig()
        state, trace = refine(scene.init_probs, scene.gt_triplets, cfg, loss_cfg)
        targets = init_state(scene.init_probs).probs
        _, _, final_total, _ = evaluate_objective(state, targets, scene.gt_triplets, cfg.alpha, loss_cfg)
        assert final_total < trace.records[0].total


def test_refine_weights_recomputed_each_step():
    scene = fixture_scene()
    _, trace = refine(scene.init_probs, scene.gt_triplets)
    key = next(iter(trace.records[0].weights))
    series = [r.weights[key] for r in trace.records]
    assert len(set(series)) > 1


def test_refine_fixture_scene_reproduces_golden_miou():
    # Regression pin: recorded from this implementation on the seed-42
    # fixture; exact equality guards against silent numeric drift.
    from relfine.evaluate import miou

    scene = fixture_scene()
    state, _ = refine(scene.init_probs, scene.gt_triplets)
    value = miou(argmax_labels(state), scene.gt_labels, len(scene.categories))
    assert value == 0.7080482241772564
