"""Symmetry-conjugated circuit ensembles and their error averaging.

A unitary C commuting with H leaves the exact propagator invariant, so the
conjugated circuit C^dag U_1 C is an equally valid simulation whose error is
the rotated operator C^dag E_1 C of unchanged norm. Averaging over several
such rotations shrinks the resultant error by the triangle inequality, and
for cyclic sets C_m = exp(i m O Delta) the part of the error that fails to
commute with the generator O is provably suppressed as 1/M.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .commutant import decompose_commuting
from .linalg import (
    commutator,
    frobenius_norm,
    haar_su2,
    hermitian_eigendecompose,
    make_rng,
    spectral_norm,
)

logger = logging.getLogger(__name__)

UNITARY_ATOL_FACTOR = 1e-9
COMMUTATION_RTOL = 1e-8
WEIGHT_SUM_TOL = 1e-12
GENERATOR_ANGLE_CAP = 0.1
RATIONAL_GAP_TOL = 1e-6
RATIONAL_DENOMINATOR_CAP = 20

SYMMETRY_KINDS = ("hadamard_global", "haar_global", "generator_powers")

_HADAMARD = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)


@dataclass(frozen=True)
class SymmetrySet:
    """Unitaries commuting with a target Hamiltonian, identity always first."""

    kind: str
    elements: tuple[np.ndarray, ...]
    generator: tuple[np.ndarray, float] | None = None

    @property
    def size(self) -> int:
        return len(self.elements)

    @property
    def dim(self) -> int:
        return self.elements[0].shape[0]


def _tensor_power(single: np.ndarray, n: int) -> np.ndarray:
    out = np.array([[1.0]], dtype=complex)
    for _ in range(n):
        out = np.kron(out, single)
    return out


def hadamard_generator(n: int) -> np.ndarray:
    """Sum over sites of the Hermitian Hadamard matrix (X + Z)/sqrt(2)."""
    d = 2**n
    total = np.zeros((d, d), dtype=complex)
    for i in range(n):
        op = np.array([[1.0]], dtype=complex)
        for j in range(n):
            op = np.kron(op, _HADAMARD if j == i else np.eye(2))
        total += op
    return total


def make_symmetry_set(
    kind: str,
    n: int,
    m: int,
    hamiltonian: np.ndarray,
    seed: int = 0,
    delta: float = 0.01,
) -> SymmetrySet:
    """Build M unitaries commuting with the Hamiltonian.

    ``hadamard_global`` is the two-element set {I, Hadamard on every site}.
    ``haar_global`` joins the identity with M - 1 independent global
    single-qubit rotations R applied to every site. ``generator_powers``
    takes powers exp(i m O Delta) of one rotation generated by the summed
    single-site Hadamard operator. Every element is verified unitary and
    verified to commute with the supplied Hamiltonian.
    """
    if kind not in SYMMETRY_KINDS:
        raise ValueError(f"unknown symmetry kind {kind!r}")
    if m < 1:
        raise ValueError("need at least one element")
    d = 2**n
    if hamiltonian.shape != (d, d):
        raise ValueError("Hamiltonian dimension does not match the qubit count")
    eye = np.eye(d, dtype=complex)
    generator = None
    if m == 1:
        elements = [eye]
    elif kind == "hadamard_global":
        if m != 2:
            raise ValueError("hadamard_global supports exactly two elements")
        elements = [eye, _tensor_power(_HADAMARD, n)]
    elif kind == "haar_global":
        rng = make_rng(seed)
        elements = [eye]
        for _ in range(m - 1):
            r = haar_su2(rng=rng)
            elements.append(_tensor_power(r, n))
    else:
        o = hadamard_generator(n)
        if spectral_norm(o) * delta > GENERATOR_ANGLE_CAP:
            raise ValueError(
                f"generator angle ||O|| * delta exceeds {GENERATOR_ANGLE_CAP}"
            )
        eig = hermitian_eigendecompose(o)
        q = eig.vectors
        elements = [
            q @ np.diag(np.exp(1j * k * delta * eig.values)) @ q.conj().T
            for k in range(m)
        ]
        generator = (o, delta)

    h_norm = frobenius_norm(hamiltonian)
    for idx, c in enumerate(elements):
        unit_defect = frobenius_norm(c.conj().T @ c - eye)
        if unit_defect > UNITARY_ATOL_FACTOR * math.sqrt(d):
            raise ValueError(f"element {idx} is not unitary (defect {unit_defect:.3e})")
        comm = frobenius_norm(commutator(c, hamiltonian))
        if comm > COMMUTATION_RTOL * h_norm:
            raise ValueError(
                f"element {idx} does not commute with the Hamiltonian "
                f"(residual {comm:.3e} vs allowed {COMMUTATION_RTOL * h_norm:.3e})"
            )
    return SymmetrySet(kind=kind, elements=tuple(elements), generator=generator)


def conjugated_formulas(u1: np.ndarray, sym: SymmetrySet) -> list[np.ndarray]:
    """The ensemble C_m^dag U_1 C_m over all elements of the set."""
    if u1.shape != (sym.dim, sym.dim):
        raise ValueError("circuit dimension does not match the symmetry set")
    return [c.conj().T @ u1 @ c for c in sym.elements]


def symmetric_error(e1: np.ndarray, sym: SymmetrySet, weights) -> np.ndarray:
    """Weighted average of the rotated error, sum_m p_m C_m^dag E_1 C_m."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (sym.size,):
        raise ValueError("need one weight per symmetry element")
    if abs(w.sum() - 1.0) > WEIGHT_SUM_TOL or np.any(w < 0):
        raise ValueError("weights must be non-negative and sum to 1")
    total = np.zeros_like(np.asarray(e1, dtype=complex))
    for p, c in zip(w, sym.elements):
        total += p * (c.conj().T @ e1 @ c)
    return total


def _check_gap_irrationality(gaps_delta: np.ndarray) -> None:
    """Heuristic: at least one generator gap must avoid rational multiples of pi.

    Exact irrationality is undecidable numerically; this scans denominators
    up to a small cap and demands that some nonzero gap stays clear of every
    q pi / r. Gaps are taken modulo 2 pi since only the phase matters.
    """
    nonzero = gaps_delta[np.abs(gaps_delta) > RATIONAL_GAP_TOL]
    if nonzero.size == 0:
        logger.warning("degenerate generator: all eigenvalue gaps vanish")
        return
    for g in np.unique(np.round(np.abs(nonzero), 12)):
        rational_close = False
        for r in range(1, RATIONAL_DENOMINATOR_CAP + 1):
            q = round(g * r / math.pi)
            if abs(g - q * math.pi / r) < RATIONAL_GAP_TOL:
                rational_close = True
                break
        if not rational_close:
            return
    raise ValueError(
        "every generator gap is numerically close to a rational multiple of pi; "
        "the cyclic average would not suppress the non-commuting error"
    )


@dataclass(frozen=True)
class SuppressionPoint:
    m: int
    noncommuting: float
    commuting: float


def suppression_scan(
    e1: np.ndarray, generator: np.ndarray, delta: float, m_list
) -> list[SuppressionPoint]:
    """Non-commuting error residual after cyclic averaging, for each M.

    The exact equal-weight average of exp(-i m O Delta) E exp(i m O Delta)
    over m = 0..M-1 is evaluated in the generator eigenbasis, where each
    matrix element just picks up the geometric phase sum
    (1/M) sum_m exp(-i m g Delta) for its eigenvalue gap g. The average is
    then split against O and the Frobenius norms of both parts reported; the
    non-commuting part decays as 1/M once M g Delta is past a few radians.
    """
    eig = hermitian_eigendecompose(generator)
    gaps = (eig.values[:, None] - eig.values[None, :]) * delta
    _check_gap_irrationality(gaps.ravel())
    q = eig.vectors
    e_tilde = q.conj().T @ np.asarray(e1, dtype=complex) @ q
    points = []
    for m in sorted(set(int(v) for v in m_list)):
        if m < 1:
            raise ValueError("M values must be positive")
        phase = np.exp(-1j * gaps)
        # Geometric sum (1 - phase^M) / (M (1 - phase)), with the resonant
        # (phase == 1) entries equal to 1 exactly.
        numer = 1.0 - phase**m
        denom = m * (1.0 - phase)
        resonant = np.abs(denom) < 1e-14
        avg_factor = np.where(resonant, 1.0, numer / np.where(resonant, 1.0, denom))
        averaged = q @ (e_tilde * avg_factor) @ q.conj().T
        split = decompose_commuting(averaged, generator)
        points.append(
            SuppressionPoint(
                m=m,
                noncommuting=frobenius_norm(averaged - split.xi),
                commuting=frobenius_norm(split.xi),
            )
        )
    return points
