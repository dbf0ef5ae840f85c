"""Tests for the spin-chain model builders and Pauli-term plumbing."""

import json

import numpy as np
import pytest

from trottermix.hamiltonians import (
    HamiltonianSpec,
    PauliTerm,
    TermGroup,
    build_model,
    group_dense,
    group_weight_squares,
    terms_to_dense,
    total_dense,
)
from trottermix.linalg import commutator, frobenius_norm, make_rng


def test_xy_chain_group_term_counts():
    spec = build_model("xy_chain", n=6, h=1.0)
    counts = [len(g.terms) for g in spec.groups]
    assert counts == [11, 5]


def test_powerlaw_two_sites_is_one_pair():
    spec = build_model("powerlaw_heisenberg", n=2, alpha=0.0)
    strings = sorted(t.string for t in spec.all_terms())
    assert strings == ["XX", "YY", "ZZ"]
    assert all(t.coefficient == 1.0 for t in spec.all_terms())


def test_ising_tl_with_fields_off():
    spec = build_model("ising_tl", n=5, mu=0.0, lam=0.0)
    group_a, group_b = spec.groups
    assert len(group_a.terms) == 5  # periodic pair XX terms only
    assert len(group_b.terms) == 0
    assert {t.string for t in group_a.terms} == {
        "XXIII",
        "IXXII",
        "IIXXI",
        "IIIXX",
        "XIIIX",
    }


def test_group_weight_squares_xy_chain():
    weights = group_weight_squares(build_model("xy_chain", n=6, h=1.0))
    assert list(weights.values()) == [11.0, 5.0]


def test_group_weight_squares_single_term():
    spec = HamiltonianSpec(
        n=2, groups=(TermGroup("A", (PauliTerm("XI", 3.0),)),)
    )
    assert group_weight_squares(spec) == {"A": 9.0}


def test_group_weight_squares_powerlaw_alpha_one():
    weights = group_weight_squares(build_model("powerlaw_heisenberg", n=3, alpha=1.0))
    assert all(v == pytest.approx(2.25, abs=1e-14) for v in weights.values())


def test_group_weight_squares_rejects_shared_strings():
    spec = HamiltonianSpec(
        n=1,
        groups=(
            TermGroup("A", (PauliTerm("X", 1.0),)),
            TermGroup("B", (PauliTerm("X", 2.0),)),
        ),
    )
    with pytest.raises(ValueError, match="X"):
        group_weight_squares(spec)


def test_dense_single_pauli_x():
    assert np.array_equal(
        terms_to_dense([PauliTerm("X", 1.0)], 1),
        np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    )


def test_dense_zz_is_diagonal():
    assert np.array_equal(
        terms_to_dense([PauliTerm("ZZ", 1.0)], 2),
        np.diag([1.0, -1.0, -1.0, 1.0]).astype(complex),
    )


def test_dense_xy_chain_two_site_spectrum():
    h = total_dense(build_model("xy_chain", n=2, h=0.0))
    values = np.linalg.eigvalsh(h)
    assert np.allclose(values, [-2.0, 0.0, 0.0, 2.0], atol=1e-12)


def test_dense_is_linear_in_terms():
    p = [PauliTerm("XY", 0.7)]
    q = [PauliTerm("ZI", -1.3)]
    combined = terms_to_dense(p + q, 2)
    split = terms_to_dense(p, 2) + terms_to_dense(q, 2)
    assert frobenius_norm(combined - split) <= 1e-14 * frobenius_norm(combined)


def test_dense_of_spec_is_sum_of_groups():
    spec = build_model("powerlaw_heisenberg", n=4, alpha=1.5)
    assert frobenius_norm(total_dense(spec) - sum(group_dense(spec))) <= 1e-12


def test_dense_hermiticity():
    rng = make_rng(4)
    strings = ["XYZI", "ZZXY", "IIXZ"]
    terms = [PauliTerm(s, float(c)) for s, c in zip(strings, rng.standard_normal(3))]
    h = terms_to_dense(terms, 4)
    assert frobenius_norm(h - h.conj().T) < 1e-14 * frobenius_norm(h)


def test_dense_qubit_cap_enforced():
    with pytest.raises(ValueError):
        terms_to_dense([PauliTerm("I" * 13 , 1.0)], 13)


def test_powerlaw_global_rotation_invariance():
    spec = build_model("powerlaw_heisenberg", n=4, alpha=1.0)
    h = total_dense(spec)
    for letter in "XYZ":
        gen = terms_to_dense(
            [PauliTerm("I" * i + letter + "I" * (3 - i), 1.0) for i in range(4)], 4
        )
        assert frobenius_norm(commutator(h, gen)) < 1e-10


def test_ising_tl_translation_invariance():
    n = 5
    spec = build_model("ising_tl", n=n, mu=0.8, lam=1.3)
    h = total_dense(spec)
    # Permutation matrix of the cyclic qubit shift i -> i+1 (mod n).
    d = 2**n
    perm = np.zeros((d, d))
    for basis in range(d):
        bits = [(basis >> (n - 1 - i)) & 1 for i in range(n)]
        shifted = bits[-1:] + bits[:-1]
        target = sum(b << (n - 1 - i) for i, b in enumerate(shifted))
        perm[target, basis] = 1.0
    assert frobenius_norm(perm @ h @ perm.T - h) < 1e-12


def test_unknown_model_rejected():
    with pytest.raises(ValueError, match="unknown model"):
        build_model("bogus_chain", n=4)


def test_too_small_chain_rejected():
    with pytest.raises(ValueError):
        build_model("xy_chain", n=1, h=1.0)


def test_negative_power_law_exponent_rejected():
    with pytest.raises(ValueError):
        build_model("powerlaw_heisenberg", n=4, alpha=-0.5)


def test_pauli_term_validation():
    with pytest.raises(ValueError):
        PauliTerm("XQ", 1.0)
    with pytest.raises(ValueError):
        PauliTerm("XX", float("nan"))


def test_spec_serialization_round_trip():
    spec = build_model("xy_chain", n=3, h=0.5)
    doc = json.loads(spec.to_json())
    assert doc["model"] == "xy_chain"
    assert doc["n"] == 3
    assert doc["params"] == {"n": 3, "h": 0.5}
    flattened = [term for group in doc["groups"] for term in group["terms"]]
    assert len(flattened) == len(spec.all_terms())


def test_cluster_spt_three_site_grouping():
    spec = build_model("cluster_spt", n=6)
    # Three sublattice groups for the 3-site stepping convention.
    assert spec.num_groups == 3
    strings = {t.string for t in spec.all_terms()}
    assert "ZXZIII" in strings or "IZXZII" in strings


def test_cluster_spt_single_group_variant():
    spec = build_model("cluster_spt", n=6, group_mod3=False)
    assert spec.num_groups == 1


def test_zxz_field_terms():
    spec = build_model("zxz_field", n=6)
    strings = [t.string for t in spec.all_terms()]
    assert any(set(s) == {"I", "Y"} for s in strings)
    assert all(t.coefficient == -1.0 for t in spec.all_terms())
