"""Tests for product-formula construction and compilation."""

import numpy as np
import pytest

from trottermix.formulas import (
    GroupEvolver,
    all_orderings,
    compile_unitary,
    make_formula,
    repeat_steps,
    uk_coefficient,
)
from trottermix.hamiltonians import (
    HamiltonianSpec,
    PauliTerm,
    TermGroup,
    build_model,
    total_dense,
)
from trottermix.linalg import evolve_unitary, fit_line, frobenius_norm


def commuting_two_group_spec() -> HamiltonianSpec:
    """Two groups of diagonal strings, so every formula is exact."""
    return HamiltonianSpec(
        n=2,
        groups=(
            TermGroup("A", (PauliTerm("ZZ", 0.9),)),
            TermGroup("B", (PauliTerm("ZI", 0.4), PauliTerm("IZ", -0.2))),
        ),
    )


def test_uk_coefficient_fourth_order():
    u4 = uk_coefficient(4)
    assert 0.25 < u4 < 0.5
    assert 6.0 * u4 * (5.0 * u4 - 1.0) == pytest.approx(2.667, abs=1e-3)


def test_uk_coefficient_sixth_order():
    u6 = uk_coefficient(6)
    assert 6.0 * u6 * (5.0 * u6 - 1.0) == pytest.approx(1.937, abs=1e-3)


def test_uk_coefficient_large_order_limit():
    assert uk_coefficient(100) == pytest.approx(1.0 / 3.0, abs=1e-2)


def test_uk_coefficient_rejects_bad_orders():
    for bad in (3, 5, 2, 0, -4):
        with pytest.raises(ValueError):
            uk_coefficient(bad)


def test_make_formula_second_order_palindrome():
    circuit = make_formula(2, (0, 1))
    assert circuit.stages == ((0, 0.5), (1, 1.0), (0, 0.5))


def test_make_formula_first_order_reversed():
    circuit = make_formula(1, (1, 0))
    assert circuit.stages == ((1, 1.0), (0, 1.0))


def test_make_formula_fourth_order_merged_stage_count():
    circuit = make_formula(4, (0, 1))
    assert len(circuit.stages) == 11
    for total in circuit.fraction_sums().values():
        assert total == pytest.approx(1.0, abs=1e-12)


def test_make_formula_stage_counts_follow_recursion():
    # After merging, S_k on two groups has 2 * 5^((k-2)/2) + 1 stages.
    assert len(make_formula(2, (0, 1)).stages) == 3
    assert len(make_formula(6, (0, 1)).stages) == 51
    # Three groups: S_2 has 2 * Gamma - 1 merged stages.
    assert len(make_formula(2, (0, 1, 2)).stages) == 5


def test_make_formula_fraction_sums_high_order():
    for order in (2, 4, 6, 8):
        circuit = make_formula(order, (1, 0, 2))
        for total in circuit.fraction_sums().values():
            assert total == pytest.approx(1.0, abs=1e-12)


def test_make_formula_rejects_bad_input():
    with pytest.raises(ValueError):
        make_formula(3, (0, 1))
    with pytest.raises(ValueError):
        make_formula(2, (0, 0))
    with pytest.raises(ValueError):
        make_formula(2, (1, 2))


def test_second_order_palindrome_property():
    stages = make_formula(2, (0, 1, 2)).stages
    assert stages == tuple(reversed(stages))


def test_all_orderings_small_counts():
    assert all_orderings(2) == [(0, 1), (1, 0)]
    assert all_orderings(1) == [(0,)]
    perms3 = all_orderings(3)
    assert len(perms3) == 6
    assert perms3 == sorted(perms3)


def test_all_orderings_cap():
    with pytest.raises(ValueError):
        all_orderings(7)


def test_compile_commuting_groups_is_exact():
    spec = commuting_two_group_spec()
    t = 0.7
    u = compile_unitary(make_formula(1, (0, 1)), spec, t)
    v = evolve_unitary(total_dense(spec), t)
    assert frobenius_norm(u - v) <= 1e-9


def test_compile_at_zero_time_is_identity():
    spec = build_model("xy_chain", n=3, h=1.0)
    u = compile_unitary(make_formula(2, (0, 1)), spec, 0.0)
    assert np.allclose(u, np.eye(8), atol=1e-12)


def test_compile_is_unitary():
    spec = build_model("xy_chain", n=4, h=1.0)
    u = compile_unitary(make_formula(4, (0, 1)), spec, 0.3)
    assert frobenius_norm(u.conj().T @ u - np.eye(16)) <= 1e-9 * 4.0


@pytest.mark.parametrize(
    "order,exponents",
    [(1, (-3.0, -1.0)), (2, (-3.0, -1.0)), (4, (-2.3, -0.3))],
)
def test_formula_order_scaling(order, exponents):
    spec = build_model("xy_chain", n=4, h=1.0)
    evolver = GroupEvolver.from_spec(spec)
    circuit = make_formula(order, (0, 1))
    h = total_dense(spec)
    times = np.logspace(*exponents, 9)
    errors = [
        frobenius_norm(compile_unitary(circuit, evolver, t) - evolve_unitary(h, t))
        for t in times
    ]
    slope, _, _ = fit_line(np.log(times), np.log(errors))
    assert order + 0.9 <= slope <= order + 1.1


def test_reversal_duality():
    # First order: the adjoint at -t belongs to the reversed ordering.
    # Even orders are palindromic, so the adjoint at -t is the same circuit.
    spec = build_model("xy_chain", n=3, h=0.8)
    t = 0.31
    forward = compile_unitary(make_formula(1, (0, 1)), spec, t)
    backward = compile_unitary(make_formula(1, (1, 0)), spec, -t)
    assert frobenius_norm(forward - backward.conj().T) <= 1e-12 * np.sqrt(8)
    for order in (2, 4):
        block = compile_unitary(make_formula(order, (0, 1)), spec, t)
        reversed_time = compile_unitary(make_formula(order, (0, 1)), spec, -t)
        assert frobenius_norm(block - reversed_time.conj().T) <= 1e-12 * np.sqrt(8)


def test_repeat_steps_single():
    u = np.diag([1.0, 1j]).astype(complex)
    assert np.array_equal(repeat_steps(u, 1), u)


def test_repeat_steps_matches_exact_composition():
    h = total_dense(build_model("xy_chain", n=3, h=1.0))
    dt = 0.01
    n_steps = 500
    stacked = repeat_steps(evolve_unitary(h, dt), n_steps)
    direct = evolve_unitary(h, dt * n_steps)
    assert frobenius_norm(stacked - direct) <= 1e-8


def test_repeat_steps_matches_sequential_product():
    spec = build_model("xy_chain", n=3, h=1.0)
    step = compile_unitary(make_formula(2, (0, 1)), spec, 0.02)
    sequential = np.eye(8, dtype=complex)
    for _ in range(100):
        sequential = sequential @ step
    assert frobenius_norm(repeat_steps(step, 100) - sequential) <= 1e-10


def test_repeat_steps_rejects_non_positive():
    with pytest.raises(ValueError):
        repeat_steps(np.eye(2, dtype=complex), 0)


def test_circuit_pretty_printer():
    lines = make_formula(2, (0, 1)).pretty().splitlines()
    assert lines == ["g0 * 0.5", "g1 * 1", "g0 * 0.5"]
