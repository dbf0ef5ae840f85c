"""Splitting error operators into commuting and non-commuting parts.

Any operator E decomposes against a Hermitian H as E = [H, eta] + xi with
[H, xi] = 0. In H's eigenbasis, xi collects the entries inside degenerate
blocks and eta carries every off-block entry divided by the eigenvalue gap.
The commuting part xi accumulates coherently over repeated steps while the
[H, eta] part only dephases, which is what makes xi the quantity that
controls long-time error growth.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .formulas import uk_coefficient
from .hamiltonians import build_model, group_dense, total_dense
from .linalg import (
    commutator,
    evolve_unitary,
    frobenius_norm,
    hermitian_eigendecompose,
)

logger = logging.getLogger(__name__)

DEGENERACY_RTOL = 1e-8


@dataclass(frozen=True)
class ErrorSplit:
    """E = [H, eta] + xi with [H, xi] = 0 up to the degeneracy tolerance."""

    xi: np.ndarray
    eta: np.ndarray
    degeneracy_tolerance: float
    near_degenerate_pairs: int = 0


def decompose_commuting(
    error: np.ndarray, hamiltonian: np.ndarray, tol_deg: float | None = None
) -> ErrorSplit:
    """Split an error operator into commuting (xi) and gap (eta) parts.

    Eigenvalue pairs closer than ``tol_deg`` are treated as degenerate: their
    entries go to xi rather than being divided by a tiny gap. The in-block
    components of eta are set to zero, the minimal-norm gauge choice (any
    in-block part of eta would commute into xi's sector anyway).
    """
    eig = hermitian_eigendecompose(hamiltonian)
    if error.shape != hamiltonian.shape:
        raise ValueError("error and Hamiltonian dimensions differ")
    if tol_deg is None:
        tol_deg = DEGENERACY_RTOL * float(np.max(np.abs(eig.values))) if eig.dim else 0.0
    q = eig.vectors
    e_tilde = q.conj().T @ error @ q
    gaps = eig.values[:, None] - eig.values[None, :]
    in_block = np.abs(gaps) <= tol_deg
    near = int(np.count_nonzero((np.abs(gaps) > 0) & (np.abs(gaps) <= tol_deg)) // 2)
    if near:
        logger.info("decompose_commuting: %d near-degenerate pairs routed to xi", near)
    xi_tilde = np.where(in_block, e_tilde, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        eta_tilde = np.where(in_block, 0.0, e_tilde / np.where(in_block, 1.0, gaps))
    xi = q @ xi_tilde @ q.conj().T
    eta = q @ eta_tilde @ q.conj().T
    return ErrorSplit(
        xi=xi, eta=eta, degeneracy_tolerance=tol_deg, near_degenerate_pairs=near
    )


def long_time_error_estimate(
    split: ErrorSplit, hamiltonian: np.ndarray, n_steps: int, dt: float
) -> np.ndarray:
    """Accumulated N-step error: N xi + (W eta W^dag - eta) / dt, W = e^{-iHt}.

    The commuting part adds up linearly with the step count while the eta
    part telescopes into boundary terms at times 0 and t = N dt.
    """
    total_time = n_steps * dt
    w = evolve_unitary(hamiltonian, total_time)
    rotated = w @ split.eta @ w.conj().T
    return n_steps * split.xi + (rotated - split.eta) / dt


def recursion_estimate(
    error_prev: np.ndarray,
    hamiltonian: np.ndarray,
    k: int,
    t: float,
    mode: str = "double_commutator",
    error_at=None,
) -> np.ndarray:
    """Estimate the order-k block error from the order-(k-2) one.

    ``double_commutator`` keeps only the linear response of the recursive
    construction: (1 - 2 u_k) u_k^k t^2 [H, [H, error_prev]].

    ``sandwich`` expands the five-factor product S_{k-2}(u t)^2
    S_{k-2}((1-4u) t) S_{k-2}(u t)^2 to first order in the sub-block error:
    the sum of e^{-iH L} E_{k-2}(s_j) e^{-iH R} over the five slots, with L
    and R the durations to the left and right of slot j. When ``error_at``
    (a callable s -> error matrix of the order-(k-2) block at duration s) is
    given this is exact up to O(E^2). Otherwise each sub-error is stood in
    by the rescaled (s/t)^{k-1} * error_prev; the rescale factors obey
    4 u^{k-1} + (1 - 4u)^{k-1} = 0, which cancels the inherited
    order-(k-1) term, but the stand-in drops the sub-error's own next-order
    piece, so the rescaled variant is only directionally meaningful.
    """
    if k < 4 or k % 2:
        raise ValueError("recursion applies to even orders k >= 4")
    u = uk_coefficient(k)
    if mode == "double_commutator":
        return (1.0 - 2.0 * u) * u**k * t**2 * commutator(
            hamiltonian, commutator(hamiltonian, error_prev)
        )
    if mode == "sandwich":
        eig = hermitian_eigendecompose(hamiltonian)
        fractions = (u, u, 1.0 - 4.0 * u, u, u)
        durations = [f * t for f in fractions]
        total = np.zeros_like(np.asarray(error_prev, dtype=complex))
        for j, s in enumerate(durations):
            left = sum(durations[:j])
            right = sum(durations[j + 1 :])
            piece = error_at(s) if error_at is not None else fractions[j] ** (k - 1) * error_prev
            total += evolve_unitary(eig, left) @ piece @ evolve_unitary(eig, right)
        return total
    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class CommutationResiduals:
    first_order: float
    second_order: float


def relative_commutation_residual(h: np.ndarray, c: np.ndarray) -> float:
    """||[H, C]||_F normalized by ||H||_F ||C||_F (guarded against C = 0)."""
    eps = float(np.finfo(float).eps)
    return frobenius_norm(commutator(h, c)) / (
        frobenius_norm(h) * frobenius_norm(c) + eps
    )


def all_to_all_commutation_check(n: int, alpha: float = 0.0) -> CommutationResiduals:
    """Do the leading error operators of the power-law Heisenberg commute with H?

    Builds the three-group (X, Y, Z pair sums) model at the given power-law
    exponent and evaluates the normalized commutation residual for the
    first-order error direction sum_{a>b} [H_a, H_b] and for the second-order
    nested-commutator coefficient. At alpha = 0 both vanish identically; at
    generic alpha they do not, which is the control for the check.
    """
    if n < 2:
        raise ValueError("need at least two sites")
    from .channels import second_order_error_coefficient

    spec = build_model("powerlaw_heisenberg", n=n, alpha=alpha)
    groups = group_dense(spec)
    h = total_dense(spec)
    c1 = np.zeros_like(h)
    for a in range(len(groups)):
        for b in range(a):
            c1 += commutator(groups[a], groups[b])
    c2 = second_order_error_coefficient(groups, tuple(range(len(groups))))
    return CommutationResiduals(
        first_order=relative_commutation_residual(h, c1),
        second_order=relative_commutation_residual(h, c2),
    )
