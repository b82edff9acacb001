import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prunelab.data import Dataset
from prunelab.network import cross_entropy, dense, forward, mlp_specs, relu
from prunelab.pruning import (
    PerturbationSearchConfig,
    PrunabilitySearchConfig,
    apply_mask,
    default_grid,
    kept_count,
    magnitude_prune,
    perturbation_robustness,
    prunability,
    prune_vs_perturb,
    random_prune,
)
from prunelab.training import TrainConfig, train_model

from conftest import make_net


def brute_force_magnitude_mask(w, keep_fraction):
    """Independent construction: sort by (-|w|, index), keep the first round(a*n)."""
    n_keep = int(round(keep_fraction * len(w)))
    order = sorted(range(len(w)), key=lambda i: (-abs(w[i]), i))
    kept = np.zeros(len(w), dtype=bool)
    kept[order[:n_keep]] = True
    return kept


def test_magnitude_prune_keeps_largest():
    w = np.array([1.0, -2.0, 3.0, -4.0])
    mask = magnitude_prune(w, 0.5)
    np.testing.assert_array_equal(mask.kept, [False, False, True, True])


def test_magnitude_prune_keep_all_is_identity():
    w = np.random.default_rng(0).standard_normal(17)
    mask = magnitude_prune(w, 1.0)
    assert mask.kept.all()
    assert mask.kept_count == 17


def test_magnitude_prune_count_and_ordering_property():
    rng = np.random.default_rng(1)
    for _ in range(20):
        w = rng.standard_normal(rng.integers(1, 60))
        alpha = rng.random()
        mask = magnitude_prune(w, alpha)
        assert mask.kept_count == kept_count(alpha, w.size)
        np.testing.assert_array_equal(mask.kept, brute_force_magnitude_mask(w, alpha))
        if 0 < mask.kept_count < w.size:
            assert np.abs(w[mask.kept]).min() >= np.abs(w[~mask.kept]).max()


def test_magnitude_prune_tie_break_lower_index():
    w = np.array([1.0, -1.0, 1.0, 2.0])
    mask = magnitude_prune(w, 0.5)  # keeps 2.0 and the first of the tied ones
    np.testing.assert_array_equal(mask.kept, [True, False, False, True])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100.0), st.integers(1, 80))
def test_magnitude_mask_scale_invariant(seed, scale, n):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(n)
    alpha = rng.random()
    np.testing.assert_array_equal(
        magnitude_prune(w, alpha).kept, magnitude_prune(scale * w, alpha).kept
    )


def test_random_prune_endpoints_and_determinism():
    w = np.zeros(40)
    assert random_prune(w, 1.0, np.random.default_rng(0)).kept.all()
    assert not random_prune(w, 0.0, np.random.default_rng(0)).kept.any()
    a = random_prune(w, 0.4, np.random.default_rng(7)).kept
    b = random_prune(w, 0.4, np.random.default_rng(7)).kept
    np.testing.assert_array_equal(a, b)
    assert a.sum() == 16


def test_apply_mask_identity_and_no_mutation():
    net = make_net([dense(4, 3), relu(), dense(3, 2)], (4,), seed=3)
    before = net.flatten().tobytes()
    mask = magnitude_prune(net.flatten(), 1.0)
    x = np.random.default_rng(0).standard_normal((5, 4))
    np.testing.assert_array_equal(forward(apply_mask(net, mask), x), forward(net, x))
    half = magnitude_prune(net.flatten(), 0.5)
    pruned = apply_mask(net, half)
    assert net.flatten().tobytes() == before  # input untouched, bit for bit
    w = pruned.flatten()
    assert (w[~half.kept] == 0.0).all()


def test_apply_mask_idempotent():
    net = make_net([dense(5, 4), relu(), dense(4, 3)], (5,), seed=4)
    mask = magnitude_prune(net.flatten(), 0.4)
    once = apply_mask(net, mask)
    twice = apply_mask(once, mask)
    assert once.flatten().tobytes() == twice.flatten().tobytes()


def test_apply_mask_all_zero_gives_constant_logits():
    net = make_net([dense(4, 3), relu(), dense(3, 2)], (4,), seed=5)
    mask = magnitude_prune(net.flatten(), 0.0)
    pruned = apply_mask(net, mask)
    x = np.random.default_rng(1).standard_normal((6, 4))
    out = forward(pruned, x)
    np.testing.assert_array_equal(out, np.zeros_like(out))


def test_apply_mask_length_mismatch():
    net = make_net([dense(4, 3)], (4,), seed=6)
    with pytest.raises(ValueError, match="mask length"):
        apply_mask(net, magnitude_prune(np.zeros(7), 0.5))


def test_pruning_exact_zeros_is_lossless():
    # planted zeros: removing them cannot change the loss
    rng = np.random.default_rng(8)
    net = make_net([dense(6, 4, use_bias=False)], (6,), seed=8)
    w = net.flatten()
    zero_idx = rng.choice(w.size, size=w.size // 2, replace=False)
    w[zero_idx] = 0.0
    net.set_flat(w)
    data = Dataset(rng.standard_normal((20, 6)), rng.integers(0, 4, 20).astype(np.int64), 4)
    mask = magnitude_prune(net.flatten(), 0.5)
    base = cross_entropy(forward(net, data.inputs), data.labels)
    pruned_loss = cross_entropy(forward(apply_mask(net, mask), data.inputs), data.labels)
    assert pruned_loss == base


# ---------------------------------------------------------------------------
# prunability search


def exhaustive_prunability_oracle(net, data, beta, grid):
    """Brute force: evaluate every grid point with independently built masks."""
    w = net.flatten()
    base = cross_entropy(forward(net, data.inputs), data.labels)
    feasible = []
    for alpha in grid:
        kept = brute_force_magnitude_mask(w, alpha)
        probe = net.copy()
        probe.set_flat(np.where(kept, w, 0.0))
        loss = cross_entropy(forward(probe, data.inputs), data.labels)
        if loss <= (1 + beta) * base:
            feasible.append(alpha)
    return min(feasible) if feasible else 1.0


def test_default_grid_is_fifty_even_steps():
    grid = default_grid()
    assert len(grid) == 50
    assert grid[0] == pytest.approx(0.02)
    assert grid[-1] == 1.0
    steps = np.diff(grid)
    np.testing.assert_allclose(steps, 0.02, rtol=1e-12)


def test_prunability_vacuous_constraint_returns_min_grid(trained_toy, toy_data):
    res = prunability(trained_toy, toy_data[0], PrunabilitySearchConfig(beta=1e12))
    assert res.kept_fraction == pytest.approx(0.02)


def test_prunability_planted_sparsity(toy_data):
    train_set, _ = toy_data
    cfg = TrainConfig(epochs=8, batch_size=32, learning_rate=0.1, seed=2)
    record = train_model(
        mlp_specs(train_set.inputs.shape[1], 8, 1, train_set.kappa),
        (train_set.inputs.shape[1],), train_set, toy_data[1], cfg,
    )
    net = record.network
    w = net.flatten()
    order = np.argsort(np.abs(w))
    w[order[: w.size // 2]] = 0.0  # exactly 50% zeros
    net.set_flat(w)
    res = prunability(record, train_set, PrunabilitySearchConfig(beta=0.1))
    assert res.kept_fraction <= 0.52
    oracle = exhaustive_prunability_oracle(net, train_set, 0.1, default_grid())
    assert res.kept_fraction == oracle


def test_prunability_all_grid_points_infeasible_returns_one():
    # every weight is essential: diagonal entries carry the correct class,
    # off-diagonals suppress the wrong ones, so with beta = 0 removing any
    # weight strictly increases the loss at every grid point
    k = 8
    net = make_net([dense(k, k, use_bias=False)], (k,))
    net.params[0]["W"][...] = 2.0 * np.eye(k) - 0.5 * (1 - np.eye(k))
    data = Dataset(np.eye(k), np.arange(k, dtype=np.int64), kappa=k)
    res = prunability(net, data, PrunabilitySearchConfig(beta=0.0))
    base = cross_entropy(forward(net, data.inputs), data.labels)
    for alpha, loss in res.grid_evaluations.items():
        if alpha < 1.0:
            assert loss > base  # verified: all grid losses exceed the bound
    assert res.kept_fraction == 1.0
    assert res.achieved_train_ce == base


def test_prunability_result_is_exhaustive_minimum(trained_toy, toy_data):
    res = prunability(trained_toy, toy_data[0], PrunabilitySearchConfig(beta=0.1))
    oracle = exhaustive_prunability_oracle(
        trained_toy.network, toy_data[0], 0.1, default_grid()
    )
    assert res.kept_fraction == oracle
    assert res.kept_fraction in set(default_grid()) | {1.0}
    # constraint holds at the result and fails at every smaller grid point
    bound = 1.1 * res.baseline_train_ce
    for alpha, loss in res.grid_evaluations.items():
        if alpha < res.kept_fraction:
            assert loss > bound
    if res.kept_fraction < 1.0:
        assert res.achieved_train_ce <= bound


def test_random_prunability_deterministic_given_seed(trained_toy, toy_data):
    cfg = PrunabilitySearchConfig(beta=0.1, mc_samples=3)
    a = prunability(trained_toy, toy_data[0], cfg, method="random",
                    rng=np.random.default_rng(5))
    b = prunability(trained_toy, toy_data[0], cfg, method="random",
                    rng=np.random.default_rng(5))
    assert a.kept_fraction == b.kept_fraction
    assert a.grid_evaluations == b.grid_evaluations
    assert a.kept_fraction <= 1.0


def test_random_prunability_vacuous_bound_returns_min_grid(trained_toy, toy_data):
    cfg = PrunabilitySearchConfig(beta=1e12, mc_samples=2)
    res = prunability(trained_toy, toy_data[0], cfg, method="random",
                      rng=np.random.default_rng(1))
    assert res.kept_fraction == pytest.approx(0.02)


def test_prunability_json_round_trip(trained_toy, toy_data):
    import json

    res = prunability(trained_toy, toy_data[0])
    payload = json.loads(res.to_json())
    assert payload["kept_fraction"] == res.kept_fraction
    assert len(payload["grid_evaluations"]) == 50


def test_prunability_rejects_nonfinite_baseline():
    net = make_net([dense(2, 2)], (2,))
    net.params[0]["W"][...] = np.inf
    data = Dataset(np.ones((4, 2)), np.zeros(4, dtype=np.int64), kappa=2)
    with pytest.raises(ValueError, match="finite"):
        prunability(net, data)


# ---------------------------------------------------------------------------
# perturbation robustness


def test_perturbation_quadratic_closed_form():
    # L(w + u) = (w + u)^2 with Var(u) = s^2 |w| + eps gives
    # E[L] = w^2 + s^2 |w| + eps, so s* = sqrt((beta w^2 - eps) / |w|).
    # Noise {+1, -1} has exact first and second moments, so the Monte Carlo
    # mean equals the analytic expectation and bisection converges to s*.
    w0 = 2.0
    beta, eps = 0.1, 1e-3
    cfg = PerturbationSearchConfig(
        beta=beta, epsilon=eps, mc_samples=2, sigma_lo=1e-4, sigma_hi=10.0,
        max_iterations=60,
    )
    noise = np.array([[1.0], [-1.0]])
    res = perturbation_robustness(lambda w: float(w[0] ** 2), np.array([w0]), cfg, noise=noise)
    expected = math.sqrt((beta * w0**2 - eps) / abs(w0))
    assert res.flag == ""
    assert res.sigma == pytest.approx(expected, rel=1e-3)
    assert res.measure == pytest.approx(1.0 / expected**2, rel=2e-3)


def test_perturbation_constant_loss_flags_high_end():
    cfg = PerturbationSearchConfig(mc_samples=2)
    res = perturbation_robustness(lambda w: 1.0, np.ones(3), cfg)
    assert res.flag == "hi-feasible"
    assert res.sigma == cfg.sigma_hi


def test_perturbation_infeasible_floor_flags_low_end():
    # beta = 0: any noise strictly increases the quadratic loss
    cfg = PerturbationSearchConfig(beta=0.0, epsilon=1e-3, mc_samples=2)
    noise = np.array([[1.0], [-1.0]])
    res = perturbation_robustness(
        lambda w: float(w[0] ** 2), np.array([2.0]), cfg, noise=noise
    )
    assert res.flag == "lo-infeasible"
    assert res.sigma == cfg.sigma_lo
    assert res.measure > 0 and math.isfinite(res.measure)


def test_perturbation_measure_finite_on_trained_model(trained_toy, toy_data):
    from prunelab.pruning import perturbation_robustness_of_model

    res = perturbation_robustness_of_model(
        trained_toy, toy_data[0], PerturbationSearchConfig(seed=1)
    )
    assert math.isfinite(res.measure) and res.measure > 0


def test_perturbation_variance_form_switch():
    # scaled form: Var = s^2 (|w| + eps) -> E[L] = w^2 + s^2 (|w| + eps)
    w0, beta, eps = 2.0, 0.1, 1e-3
    cfg = PerturbationSearchConfig(
        beta=beta, epsilon=eps, mc_samples=2, sigma_lo=1e-4, sigma_hi=10.0,
        max_iterations=60, variance_form="scaled",
    )
    noise = np.array([[1.0], [-1.0]])
    res = perturbation_robustness(lambda w: float(w[0] ** 2), np.array([w0]), cfg, noise=noise)
    expected = math.sqrt(beta * w0**2 / (abs(w0) + eps))
    assert res.sigma == pytest.approx(expected, rel=1e-3)


# ---------------------------------------------------------------------------
# prune vs perturb


def test_prune_vs_perturb_norm_matching(trained_toy, toy_data):
    rows = prune_vs_perturb(
        trained_toy, toy_data[0], toy_data[1],
        fractions=[0.1, 0.3, 0.5, 0.7, 0.9],
        rng=np.random.default_rng(3),
    )
    for row in rows:
        assert row["perturb_norm"] == pytest.approx(row["removed_norm"], abs=1e-12)


def test_prune_vs_perturb_vanishing_fraction(trained_toy, toy_data):
    rows = prune_vs_perturb(
        trained_toy, toy_data[0], toy_data[1], fractions=[1e-9],
        rng=np.random.default_rng(1),
    )
    row = rows[0]
    assert row["removed_norm"] == 0.0
    for key in ("delta_train_ce_prune", "delta_test_ce_prune",
                "delta_train_ce_perturb", "delta_test_ce_perturb"):
        assert row[key] == 0.0


def test_prune_vs_perturb_deltas_match_direct_reevaluation(trained_toy, toy_data):
    train_set, _ = toy_data
    rows = prune_vs_perturb(
        trained_toy, train_set, toy_data[1], fractions=[0.8],
        rng=np.random.default_rng(9),
    )
    # independent re-evaluation of the masked network
    net = trained_toy.network
    w = net.flatten()
    kept = brute_force_magnitude_mask(w, 0.2)
    probe = net.copy()
    probe.set_flat(np.where(kept, w, 0.0))
    base = cross_entropy(forward(net, train_set.inputs), train_set.labels)
    direct = cross_entropy(forward(probe, train_set.inputs), train_set.labels) - base
    assert rows[0]["delta_train_ce_prune"] == pytest.approx(direct, rel=1e-12)
    assert rows[0]["delta_train_ce_prune"] >= 0.0


def test_prune_vs_perturb_coordinate_matching(trained_toy, toy_data):
    rows = prune_vs_perturb(
        trained_toy, toy_data[0], toy_data[1], fractions=[0.5],
        rng=np.random.default_rng(2), match="coordinate",
    )
    assert rows[0]["perturb_norm"] == pytest.approx(rows[0]["removed_norm"], abs=1e-12)


def test_prune_vs_perturb_rejects_bad_fractions(trained_toy, toy_data):
    with pytest.raises(ValueError):
        prune_vs_perturb(trained_toy, toy_data[0], toy_data[1], [0.0, 0.5],
                         np.random.default_rng(0))
