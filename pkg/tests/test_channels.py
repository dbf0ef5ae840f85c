"""Tests for mixed-unitary channels, Haar losses, and optimal weights."""

import numpy as np
import pytest

from trottermix.channels import (
    LossTables,
    MixedChannel,
    analytic_third_order,
    grid_search_weights,
    leading_error_coefficient,
    loss_analytic,
    loss_monte_carlo,
    optimal_weight_two_term,
    ordering_channel,
    simplex_grid,
)
from trottermix.formulas import make_formula
from trottermix.hamiltonians import (
    HamiltonianSpec,
    PauliTerm,
    TermGroup,
    build_model,
    group_dense,
    total_dense,
)
from trottermix.linalg import (
    commutator,
    evolve_unitary,
    fit_line,
    frobenius_norm,
    haar_unitary_from_rng,
    make_rng,
)


def random_unitaries(d: int, count: int, seed: int) -> list[np.ndarray]:
    rng = make_rng(seed)
    return [haar_unitary_from_rng(d, rng) for _ in range(count)]


def test_channel_weight_validation():
    u = np.eye(2, dtype=complex)
    with pytest.raises(ValueError):
        MixedChannel(unitaries=[u, u], weights=(0.7, 0.7))
    with pytest.raises(ValueError):
        MixedChannel(unitaries=[np.diag([1.0, 2.0]).astype(complex)], weights=(1.0,))


def test_loss_of_exact_channel_is_zero():
    (v,) = random_unitaries(8, 1, 3)
    report = loss_analytic(MixedChannel(unitaries=[v], weights=(1.0,)), v)
    assert report.value <= 1e-12
    assert report.method == "analytic"


def test_loss_single_orthogonal_unitary():
    # One unitary with Tr(U^dag V) = 0 sits at the single-circuit plateau
    # 2 (1 - 1/(d+1)).
    d = 2
    v = np.eye(d, dtype=complex)
    u = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    report = loss_analytic(MixedChannel(unitaries=[u], weights=(1.0,)), v)
    assert report.value == pytest.approx(2.0 * (1.0 - 1.0 / (d + 1)), abs=1e-12)


def test_analytic_matches_monte_carlo():
    d = 16
    us = random_unitaries(d, 2, 11)
    v = random_unitaries(d, 1, 12)[0]
    channel = MixedChannel(unitaries=us, weights=(0.5, 0.5))
    exact = loss_analytic(channel, v).value
    sampled = loss_monte_carlo(channel, v, samples=100_000, seed=5)
    assert abs(sampled.value - exact) <= 3.0 * sampled.stderr


def test_monte_carlo_exact_channel_zero_every_sample():
    (v,) = random_unitaries(4, 1, 21)
    report = loss_monte_carlo(MixedChannel(unitaries=[v], weights=(1.0,)), v, 50, 0)
    assert report.value <= 1e-12
    assert report.stderr <= 1e-12


def test_monte_carlo_requires_two_samples():
    (v,) = random_unitaries(2, 1, 1)
    with pytest.raises(ValueError):
        loss_monte_carlo(MixedChannel(unitaries=[v], weights=(1.0,)), v, 1, 0)


def test_monte_carlo_deviation_shrinks_with_samples():
    d = 8
    us = random_unitaries(d, 2, 31)
    v = random_unitaries(d, 1, 32)[0]
    channel = MixedChannel(unitaries=us, weights=(0.4, 0.6))

    def batch_rms(samples: int) -> float:
        values = [
            loss_monte_carlo(channel, v, samples, seed).value for seed in range(20)
        ]
        values = np.asarray(values)
        return float(np.sqrt(np.mean((values - values.mean()) ** 2)))

    small, large = batch_rms(100), batch_rms(10_000)
    # Ten times the samples should shrink scatter about tenfold.
    assert 3.0 <= small / large <= 30.0


def test_leading_error_first_order_is_half_commutator():
    spec = build_model("xy_chain", n=3, h=1.0)
    a, b = group_dense(spec)
    coefficient = leading_error_coefficient(make_formula(1, (0, 1)), spec, 2)
    oracle = 0.5j * commutator(a, b)
    assert frobenius_norm(coefficient - oracle) <= 0.02 * frobenius_norm(oracle)


def test_leading_error_vanishes_for_commuting_groups():
    spec = HamiltonianSpec(
        n=2,
        groups=(
            TermGroup("A", (PauliTerm("ZZ", 0.9),)),
            TermGroup("B", (PauliTerm("IZ", 0.4),)),
        ),
    )
    coefficient = leading_error_coefficient(make_formula(1, (0, 1)), spec, 2)
    assert frobenius_norm(coefficient) < 1e-8


def test_leading_error_second_order_matches_closed_form():
    spec = build_model("xy_chain", n=3, h=1.0)
    coefficient = leading_error_coefficient(make_formula(2, (0, 1)), spec, 3)
    oracle = analytic_third_order(spec, (0, 1), 1.0)
    assert frobenius_norm(coefficient - oracle) <= 0.02 * frobenius_norm(oracle)


def test_third_order_error_closed_forms():
    spec = build_model("xy_chain", n=3, h=1.0)
    a, b = group_dense(spec)
    e_forward = analytic_third_order(spec, (0, 1), 1.0)
    oracle = commutator(b, commutator(b, a)) / 12.0 - commutator(
        a, commutator(a, b)
    ) / 24.0
    assert frobenius_norm(e_forward - oracle) <= 1e-12 * frobenius_norm(oracle)

    e_third = analytic_third_order(spec, (0, 1), 1.0 / 3.0)
    oracle_third = commutator(a, commutator(a, b)) / 24.0
    assert frobenius_norm(e_third - oracle_third) <= 1e-12 * frobenius_norm(
        oracle_third
    )


def test_third_order_error_is_linear_in_weight():
    spec = build_model("xy_chain", n=3, h=1.0)
    a, b = group_dense(spec)
    p = 0.37
    combined = analytic_third_order(spec, (0, 1), p)
    oracle = commutator((2.0 - 3.0 * p) * a + (1.0 - 3.0 * p) * b, commutator(a, b)) / 24.0
    assert frobenius_norm(combined - oracle) <= 1e-12 * frobenius_norm(oracle)


def test_third_order_error_commuting_groups_vanishes():
    spec = HamiltonianSpec(
        n=2,
        groups=(
            TermGroup("A", (PauliTerm("ZZ", 1.0),)),
            TermGroup("B", (PauliTerm("ZI", 1.0),)),
        ),
    )
    assert frobenius_norm(analytic_third_order(spec, (0, 1), 0.3)) < 1e-14


def test_optimal_weight_xy_chain_exact():
    optimum = optimal_weight_two_term(build_model("xy_chain", n=6, h=1.0))
    assert optimum.p_opt == 27.0 / 48.0
    assert optimum.p_opt == 0.5625


def test_optimal_weight_limits():
    lopsided = HamiltonianSpec(
        n=2,
        groups=(
            TermGroup("A", (PauliTerm("XI", 1.0),)),
            TermGroup("B", (PauliTerm("ZI", 0.0),)),
        ),
    )
    assert optimal_weight_two_term(lopsided).p_opt == pytest.approx(2.0 / 3.0)
    balanced = HamiltonianSpec(
        n=2,
        groups=(
            TermGroup("A", (PauliTerm("XI", 1.0),)),
            TermGroup("B", (PauliTerm("ZI", 1.0),)),
        ),
    )
    assert optimal_weight_two_term(balanced).p_opt == pytest.approx(0.5)


def test_optimal_weight_ratio_matches_error_norms():
    # Single-string groups A = 1.7 X, B = 0.6 Z satisfy the weight-square
    # quadratic model exactly (the cross term Tr([A,C]^dag [B,C]) vanishes
    # and both commutator norms carry the same constant), so the closed-form
    # ratios are exact here.
    spec = HamiltonianSpec(
        n=1,
        groups=(
            TermGroup("A", (PauliTerm("X", 1.7),)),
            TermGroup("B", (PauliTerm("Z", 0.6),)),
        ),
    )
    optimum = optimal_weight_two_term(spec)
    norm_sq = {
        p: frobenius_norm(analytic_third_order(spec, (0, 1), p)) ** 2
        for p in (optimum.p_opt, 1.0, 0.0)
    }
    assert norm_sq[optimum.p_opt] / norm_sq[1.0] == pytest.approx(
        optimum.ratio_vs_a_outside, rel=1e-8
    )
    assert norm_sq[optimum.p_opt] / norm_sq[0.0] == pytest.approx(
        optimum.ratio_vs_b_outside, rel=1e-8
    )


def test_optimal_weight_is_close_to_true_minimum_for_xy_chain():
    # For the xy chain the weight-square model is only approximate; the
    # closed-form weight must still land near the true quadratic minimum.
    spec = build_model("xy_chain", n=4, h=1.0)
    optimum = optimal_weight_two_term(spec)
    ps = np.linspace(0.0, 1.0, 2001)
    norms = [
        frobenius_norm(analytic_third_order(spec, (0, 1), p)) for p in ps
    ]
    true_min = ps[int(np.argmin(norms))]
    assert abs(optimum.p_opt - true_min) <= 0.02


def test_simplex_grid_deduplicates():
    assert simplex_grid(1, 10).shape == (1, 1)
    rows = simplex_grid(2, 10)
    assert np.allclose(rows.sum(axis=1), 1.0)
    assert len(np.unique(rows, axis=0)) == len(rows)


def test_grid_search_single_formula():
    spec = build_model("xy_chain", n=3, h=1.0)
    result = grid_search_weights([make_formula(2, (0, 1))], spec, t=0.2)
    assert result.weights == (1.0,)
    assert len(result.rows) == 1


def test_grid_search_degenerate_tie_breaks_lexicographically():
    spec = build_model("xy_chain", n=3, h=1.0)
    circuit = make_formula(2, (0, 1))
    result = grid_search_weights([circuit, circuit], spec, t=0.2)
    assert result.weights == (0.0, 1.0)


def test_grid_search_monte_carlo_tracks_analytic():
    spec = build_model("xy_chain", n=3, h=1.0)
    circuits = [make_formula(2, (0, 1)), make_formula(2, (1, 0))]
    exact = grid_search_weights(circuits, spec, t=0.3, loss="analytic")
    sampled = grid_search_weights(
        circuits, spec, t=0.3, loss="monte_carlo", samples=4000, seed=2
    )
    assert abs(sampled.weights[0] - exact.weights[0]) <= 0.1


def test_mixture_loss_never_beats_convexity_bound():
    rng = make_rng(77)
    for _ in range(200):
        d = int(rng.choice([4, 8]))
        m = int(rng.choice([2, 3]))
        us = [haar_unitary_from_rng(d, rng) for _ in range(m)]
        v = haar_unitary_from_rng(d, rng)
        raw = rng.random(m) + 0.05
        weights = tuple(raw / raw.sum())
        mixture = loss_analytic(MixedChannel(unitaries=us, weights=weights), v).value
        singles = [
            loss_analytic(MixedChannel(unitaries=[u], weights=(1.0,)), v).value
            for u in us
        ]
        bound = sum(p * np.sqrt(l) for p, l in zip(weights, singles)) ** 2
        assert mixture <= bound + 1e-9


def test_loss_invariant_under_global_left_rotation():
    d = 8
    us = random_unitaries(d, 2, 51)
    v = random_unitaries(d, 1, 52)[0]
    w = random_unitaries(d, 1, 53)[0]
    weights = (0.3, 0.7)
    base = loss_analytic(MixedChannel(unitaries=us, weights=weights), v).value
    rotated = loss_analytic(
        MixedChannel(unitaries=[w @ u for u in us], weights=weights), w @ v
    ).value
    assert rotated == pytest.approx(base, rel=1e-9, abs=1e-12)


def test_pair_average_cancels_second_order():
    spec = build_model("xy_chain", n=3, h=1.0)
    h = total_dense(spec)
    times = np.logspace(-3, -2, 6)
    single_rms, mixed_rms = [], []
    for t in times:
        channel, _ = ordering_channel(spec, order=1, t=t)
        v = evolve_unitary(h, t)
        single = MixedChannel(unitaries=[channel.unitaries[0]], weights=(1.0,))
        single_rms.append(np.sqrt(loss_analytic(single, v).value))
        mixed_rms.append(np.sqrt(loss_analytic(channel, v).value))
    single_slope, _, _ = fit_line(np.log(times), np.log(single_rms))
    mixed_slope, _, _ = fit_line(np.log(times), np.log(mixed_rms))
    assert 1.9 <= single_slope <= 2.1
    assert 2.9 <= mixed_slope <= 3.1


def test_loss_tables_quadratic_form_consistency():
    d = 8
    us = random_unitaries(d, 3, 61)
    v = random_unitaries(d, 1, 62)[0]
    tables = LossTables(us, v)
    weights = np.array([0.2, 0.3, 0.5])
    direct = loss_analytic(MixedChannel(unitaries=us, weights=tuple(weights)), v).value
    assert tables.loss(weights) == pytest.approx(direct, rel=1e-12, abs=1e-12)
    batch = tables.loss_batch(weights[None, :])
    assert batch[0] == pytest.approx(direct, rel=1e-12, abs=1e-12)
