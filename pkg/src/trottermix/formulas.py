"""Suzuki-Trotter product formulas over ordered Hamiltonian groups.

A circuit is a flat list of stages ``(group_index, fraction)``; the compiled
unitary is the left-to-right product of ``exp(-i H_g * fraction * t)`` with
``stages[0]`` as the leftmost factor. Construction rules:

  * order 1:    one stage per group, in the requested ordering;
  * order 2:    half-step palindrome (forward halves then reversed halves,
                with the pivot stage merged), 2*Gamma - 1 stages;
  * order k>=4: five-fold recursion
                S_k(t) = S_{k-2}(u_k t)^2 S_{k-2}((1-4u_k) t) S_{k-2}(u_k t)^2
                with u_k = (4 - 4^(1/(k-1)))^(-1), merging adjacent stages of
                the same group (the merge is exact: the exponentials share a
                generator).

Only order 1 and even orders are defined; odd orders > 1 are rejected.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .hamiltonians import HamiltonianSpec, group_dense
from .linalg import HermitianEigen, hermitian_eigendecompose

FRACTION_SUM_TOL = 1e-12
ORDERINGS_CAP = 720


def uk_coefficient(k: int) -> float:
    """Recursion coefficient u_k = (4 - 4^(1/(k-1)))^(-1) for even k >= 4."""
    if k < 4 or k % 2 != 0:
        raise ValueError(f"u_k is defined for even k >= 4, got {k}")
    return 1.0 / (4.0 - 4.0 ** (1.0 / (k - 1)))


@dataclass(frozen=True)
class Circuit:
    """One product-formula block: stages of (group index, fraction of t)."""

    stages: tuple[tuple[int, float], ...]
    order: int
    ordering: tuple[int, ...]

    @property
    def num_groups(self) -> int:
        return len(self.ordering)

    def fraction_sums(self) -> dict[int, float]:
        sums: dict[int, float] = {g: 0.0 for g in self.ordering}
        for g, f in self.stages:
            sums[g] += f
        return sums

    def pretty(self) -> str:
        """One stage per line, 'g<idx> * <fraction>' (golden-file format)."""
        return "\n".join(f"g{g} * {f:.17g}" for g, f in self.stages)


def _merge_adjacent(stages: list[tuple[int, float]]) -> list[tuple[int, float]]:
    merged: list[tuple[int, float]] = []
    for g, f in stages:
        if merged and merged[-1][0] == g:
            merged[-1] = (g, merged[-1][1] + f)
        else:
            merged.append((g, f))
    return [(g, f) for g, f in merged if f != 0.0]


def _recurse(order: int, ordering: tuple[int, ...]) -> list[tuple[int, float]]:
    if order == 1:
        return [(g, 1.0) for g in ordering]
    if order == 2:
        half = [(g, 0.5) for g in ordering]
        return _merge_adjacent(half + half[::-1])
    u = uk_coefficient(order)
    inner = _recurse(order - 2, ordering)
    scaled = lambda c: [(g, f * c) for g, f in inner]
    return _merge_adjacent(
        scaled(u) + scaled(u) + scaled(1.0 - 4.0 * u) + scaled(u) + scaled(u)
    )


def make_formula(order: int, ordering) -> Circuit:
    """Build the order-k formula for the given permutation of group indices."""
    ordering = tuple(int(g) for g in ordering)
    if sorted(ordering) != list(range(len(ordering))):
        raise ValueError(
            f"ordering must be a permutation of 0..{len(ordering) - 1}, got {ordering}"
        )
    if order != 1 and (order < 2 or order % 2 != 0):
        raise ValueError(f"order must be 1 or even, got {order}")
    stages = _recurse(order, ordering)
    circuit = Circuit(stages=tuple(stages), order=order, ordering=ordering)
    for g, s in circuit.fraction_sums().items():
        if abs(s - 1.0) > FRACTION_SUM_TOL:
            raise AssertionError(f"group {g} fractions sum to {s!r}, expected 1")
    return circuit


def all_orderings(num_groups: int, cap: int = ORDERINGS_CAP) -> list[tuple[int, ...]]:
    """All permutations of 0..Gamma-1 in lexicographic order."""
    count = 1
    for i in range(2, num_groups + 1):
        count *= i
    if count > cap:
        raise ValueError(
            f"{num_groups}! = {count} orderings exceeds the cap of {cap}; "
            "sample orderings instead of enumerating them"
        )
    return list(itertools.permutations(range(num_groups)))


class GroupEvolver:
    """Caches per-group eigendecompositions and stage exponentials.

    Stage exponentials are memoized by (group index, fraction*t rounded to 15
    significant digits); the rounding bounds the cache without affecting any
    quantity at double precision.
    """

    def __init__(self, group_matrices):
        self.eigs: list[HermitianEigen] = [
            hermitian_eigendecompose(g) for g in group_matrices
        ]
        self.dim = self.eigs[0].dim if self.eigs else 0
        self._cache: dict[tuple[int, float], np.ndarray] = {}

    @classmethod
    def from_spec(cls, spec: HamiltonianSpec) -> "GroupEvolver":
        return cls(group_dense(spec))

    def stage_unitary(self, group: int, duration: float) -> np.ndarray:
        key = (group, float(np.format_float_scientific(duration, precision=14)))
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        eig = self.eigs[group]
        phases = np.exp(-1j * eig.values * duration)
        u = (eig.vectors * phases) @ eig.vectors.conj().T
        self._cache[key] = u
        return u


def compile_unitary(
    circuit: Circuit, spec: HamiltonianSpec | GroupEvolver, t: float
) -> np.ndarray:
    """Dense unitary of one formula block at time t.

    Accepts either a Hamiltonian spec (groups are eigendecomposed on the
    spot) or a prebuilt :class:`GroupEvolver` for callers compiling many
    circuits over the same groups.
    """
    evolver = (
        spec if isinstance(spec, GroupEvolver) else GroupEvolver.from_spec(spec)
    )
    if max(g for g, _ in circuit.stages) >= len(evolver.eigs):
        raise ValueError("circuit references more groups than the Hamiltonian has")
    u = np.eye(evolver.dim, dtype=complex)
    for g, f in circuit.stages:
        u = u @ evolver.stage_unitary(g, f * t)
    return u


def repeat_steps(u_step: np.ndarray, n_steps: int) -> np.ndarray:
    """U_step^N by binary powering."""
    if n_steps < 1:
        raise ValueError(f"step count must be >= 1, got {n_steps}")
    result = None
    power = u_step
    n = n_steps
    while n:
        if n & 1:
            result = power if result is None else result @ power
        n >>= 1
        if n:
            power = power @ power
    return result
