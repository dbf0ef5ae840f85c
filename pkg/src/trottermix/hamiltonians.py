"""Pauli-string Hamiltonians and the benchmark models used in experiments.

A Hamiltonian is an ordered list of named groups of Pauli terms,
``H = sum_g H_g``; product formulas exponentiate one group per stage, so the
grouping is part of the model definition:

  * ``xy_chain``      A = sum X_i X_{i+1} + h sum X_i, B = sum Y_i Y_{i+1}
                      (open chain).
  * ``powerlaw_heisenberg``  groups H_X, H_Y, H_Z with couplings
                      1/|i-j|^alpha over all pairs i < j (open boundary; at
                      alpha = 0 every pair couples with weight 1).
  * ``ising_tl``      A = sum X_i X_{i+1} + mu sum X_i with the periodic wrap
                      X_n X_1, B = lambda sum Z_i.
  * ``cluster_spt``   terms -(J Z_{i-1} X_i Z_{i+1} + V X_i X_{i+1} + h X_i)
                      on a ring, grouped by centre site mod 3 (or one group).
  * ``zxz_field``     terms -(Z_{i-1} X_i Z_{i+1} + Y_i) on a ring, grouped
                      the same way.

Coefficient norms ``J_g^2 = sum_sigma J_sigma^2`` use the bare-coefficient
convention (no 2^n trace factor); every ratio computed from them is invariant
under that choice.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

PAULI_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "Y": np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex),
    "Z": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}

MAX_DENSE_QUBITS = 12

MODEL_NAMES = ("xy_chain", "powerlaw_heisenberg", "ising_tl", "cluster_spt", "zxz_field")


@dataclass(frozen=True)
class PauliTerm:
    """One weighted Pauli string, e.g. 0.5 * XIXI."""

    string: str
    coefficient: float

    def __post_init__(self):
        if not self.string or any(c not in "IXYZ" for c in self.string):
            raise ValueError(f"invalid Pauli string {self.string!r}")
        if not np.isfinite(self.coefficient):
            raise ValueError(f"non-finite coefficient for {self.string!r}")

    @property
    def n(self) -> int:
        return len(self.string)


@dataclass(frozen=True)
class TermGroup:
    name: str
    terms: tuple[PauliTerm, ...]


@dataclass(frozen=True)
class HamiltonianSpec:
    """Qubit count plus an ordered list of named term groups H_1..H_Gamma."""

    n: int
    groups: tuple[TermGroup, ...]
    model: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"qubit count must be >= 1, got {self.n}")
        if len(self.groups) < 1:
            raise ValueError("need at least one term group")
        for group in self.groups:
            for term in group.terms:
                if term.n != self.n:
                    raise ValueError(
                        f"term {term.string!r} has length {term.n}, expected {self.n}"
                    )

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    def group_names(self) -> tuple[str, ...]:
        return tuple(g.name for g in self.groups)

    def all_terms(self) -> tuple[PauliTerm, ...]:
        return tuple(t for g in self.groups for t in g.terms)

    def to_json(self) -> str:
        """Serialize for experiment provenance (name, n, params, full term echo)."""
        doc = {
            "model": self.model,
            "n": self.n,
            "params": self.params,
            "groups": [
                {
                    "name": g.name,
                    "terms": [[t.string, t.coefficient] for t in g.terms],
                }
                for g in self.groups
            ],
        }
        return json.dumps(doc, sort_keys=True)


def _string(n: int, placed: dict[int, str]) -> str:
    letters = ["I"] * n
    for site, letter in placed.items():
        letters[site % n] = letter
    return "".join(letters)


def build_model(name: str, **params) -> HamiltonianSpec:
    """Construct one of the benchmark models; see the module docstring."""
    if name not in MODEL_NAMES:
        raise ValueError(f"unknown model {name!r}; expected one of {MODEL_NAMES}")
    builder = {
        "xy_chain": _build_xy_chain,
        "powerlaw_heisenberg": _build_powerlaw_heisenberg,
        "ising_tl": _build_ising_tl,
        "cluster_spt": _build_cluster_spt,
        "zxz_field": _build_zxz_field,
    }[name]
    return builder(**params)


def _build_xy_chain(n: int, h: float = 0.0) -> HamiltonianSpec:
    if n < 2:
        raise ValueError("xy_chain needs n >= 2")
    a_terms = [PauliTerm(_string(n, {i: "X", i + 1: "X"}), 1.0) for i in range(n - 1)]
    if h != 0.0:
        a_terms += [PauliTerm(_string(n, {i: "X"}), float(h)) for i in range(n)]
    b_terms = [PauliTerm(_string(n, {i: "Y", i + 1: "Y"}), 1.0) for i in range(n - 1)]
    return HamiltonianSpec(
        n=n,
        groups=(TermGroup("A", tuple(a_terms)), TermGroup("B", tuple(b_terms))),
        model="xy_chain",
        params={"n": n, "h": h},
    )


def _build_powerlaw_heisenberg(n: int, alpha: float) -> HamiltonianSpec:
    if n < 2:
        raise ValueError("powerlaw_heisenberg needs n >= 2")
    if alpha < 0:
        raise ValueError("power-law exponent alpha must be >= 0")
    groups = []
    for letter in "XYZ":
        terms = []
        for j in range(n - 1):
            for i in range(j + 1, n):
                coeff = 1.0 / abs(i - j) ** alpha
                terms.append(PauliTerm(_string(n, {i: letter, j: letter}), coeff))
        groups.append(TermGroup(f"H_{letter}", tuple(terms)))
    return HamiltonianSpec(
        n=n,
        groups=tuple(groups),
        model="powerlaw_heisenberg",
        params={"n": n, "alpha": alpha},
    )


def _build_ising_tl(n: int, mu: float, lam: float) -> HamiltonianSpec:
    if n < 2:
        raise ValueError("ising_tl needs n >= 2")
    a_terms = [
        PauliTerm(_string(n, {i: "X", (i + 1) % n: "X"}), 1.0) for i in range(n)
    ]
    if mu != 0.0:
        a_terms += [PauliTerm(_string(n, {i: "X"}), float(mu)) for i in range(n)]
    b_terms = []
    if lam != 0.0:
        b_terms = [PauliTerm(_string(n, {i: "Z"}), float(lam)) for i in range(n)]
    return HamiltonianSpec(
        n=n,
        groups=(TermGroup("A", tuple(a_terms)), TermGroup("B", tuple(b_terms))),
        model="ising_tl",
        params={"n": n, "mu": mu, "lam": lam},
    )


def _three_site_blocks(n: int, block_terms, group_mod3: bool, model: str, params: dict):
    """Ring of 3-site blocks, grouped by centre index mod 3 or as one group.

    ``block_terms(i)`` yields the Pauli terms of the block centred on site i.
    Blocks whose centres agree mod 3 act on disjoint site triples, so each
    mod-3 group exponentiates as a product of commuting local gates; that is
    what the 3-site imaginary-time sweep relies on.
    """
    if n < 3:
        raise ValueError(f"{model} needs n >= 3")
    if group_mod3:
        buckets: list[list[PauliTerm]] = [[], [], []]
        for i in range(n):
            buckets[i % 3].extend(block_terms(i))
        groups = tuple(
            TermGroup(f"mod3_{r}", tuple(terms)) for r, terms in enumerate(buckets)
        )
    else:
        terms = [t for i in range(n) for t in block_terms(i)]
        groups = (TermGroup("H", tuple(terms)),)
    return HamiltonianSpec(n=n, groups=groups, model=model, params=params)


def _build_cluster_spt(
    n: int, J: float = 1.0, V: float = -1.0, h: float = 1.0, group_mod3: bool = True
) -> HamiltonianSpec:
    def block(i: int) -> list[PauliTerm]:
        terms = []
        if J != 0.0:
            terms.append(
                PauliTerm(_string(n, {i - 1: "Z", i: "X", i + 1: "Z"}), -float(J))
            )
        if V != 0.0:
            terms.append(PauliTerm(_string(n, {i: "X", i + 1: "X"}), -float(V)))
        if h != 0.0:
            terms.append(PauliTerm(_string(n, {i: "X"}), -float(h)))
        return terms

    return _three_site_blocks(
        n, block, group_mod3, "cluster_spt", {"n": n, "J": J, "V": V, "h": h}
    )


def _build_zxz_field(n: int, group_mod3: bool = True) -> HamiltonianSpec:
    def block(i: int) -> list[PauliTerm]:
        return [
            PauliTerm(_string(n, {i - 1: "Z", i: "X", i + 1: "Z"}), -1.0),
            PauliTerm(_string(n, {i: "Y"}), -1.0),
        ]

    return _three_site_blocks(n, block, group_mod3, "zxz_field", {"n": n})


def group_weight_squares(spec: HamiltonianSpec) -> dict[str, float]:
    """Per-group J_g^2 = sum of squared coefficients (bare convention).

    Requires the groups to have disjoint Pauli-string support, which is the
    regime where the closed-form optimal two-formula weight applies.
    """
    seen: dict[str, str] = {}
    shared = []
    for group in spec.groups:
        for term in group.terms:
            owner = seen.get(term.string)
            if owner is not None and owner != group.name:
                shared.append((term.string, owner, group.name))
            else:
                seen[term.string] = group.name
    if shared:
        listing = ", ".join(f"{s} in {a} and {b}" for s, a, b in shared)
        raise ValueError(f"groups share Pauli strings: {listing}")
    return {
        group.name: float(sum(t.coefficient**2 for t in group.terms))
        for group in spec.groups
    }


def terms_to_dense(terms, n: int) -> np.ndarray:
    """Dense 2^n x 2^n matrix of sum J_sigma sigma via Kronecker products."""
    if n > MAX_DENSE_QUBITS:
        raise ValueError(
            f"n = {n} exceeds the dense-matrix cap of {MAX_DENSE_QUBITS} qubits"
        )
    d = 2**n
    out = np.zeros((d, d), dtype=complex)
    for term in terms:
        if len(term.string) != n:
            raise ValueError(
                f"term {term.string!r} has length {len(term.string)}, expected {n}"
            )
        op = np.array([[1.0 + 0.0j]])
        for letter in term.string:
            op = np.kron(op, PAULI_MATRICES[letter])
        out += term.coefficient * op
    return out


def group_dense(spec: HamiltonianSpec) -> list[np.ndarray]:
    """Dense matrix of every group, in group order."""
    return [terms_to_dense(g.terms, spec.n) for g in spec.groups]


def total_dense(spec: HamiltonianSpec) -> np.ndarray:
    """Dense matrix of the full Hamiltonian (sum over groups)."""
    return terms_to_dense(spec.all_terms(), spec.n)
