"""Dense complex linear algebra kernel.

Everything downstream (product formulas, channel losses, error splitting,
iTEBD) works with dense numpy arrays; this module centralizes the few
numerical primitives they share: Hermitian eigendecomposition, exact unitary
evolution, norms, Haar sampling, and gauge-fixed truncated SVD.

Conventions:
  * Operators are complex ``(d, d)`` numpy arrays.
  * ``frobenius_norm`` is the square-root convention ``sqrt(sum |a_ij|^2)``;
    quadratic expressions elsewhere in the codebase square it explicitly.
  * All randomness flows through :func:`make_rng`, a counter-based Philox
    generator, so that every sampled quantity is reproducible from a single
    integer seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITIAN_RTOL = 1e-10

EIGEN_RESIDUAL_RTOL = 1e-10

SPECTRAL_TOL = 1e-8
SPECTRAL_MAX_ITER = 10_000


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator used across the whole package.

    Philox is chosen over the default PCG64 because its counter-based design
    makes independent streams trivially safe: every (seed, draw index) pair
    maps to the same output on every platform.
    """
    return np.random.Generator(np.random.Philox(int(seed)))


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix commutator [a, b] = ab - ba."""
    return a @ b - b @ a


def frobenius_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a))


def spectral_norm(a: np.ndarray) -> float:
    """Largest singular value via power iteration on A†A.

    Runs to relative tolerance ``SPECTRAL_TOL`` with an iteration cap; if the
    iteration stagnates without converging, falls back to a full
    eigendecomposition of A†A.
    """
    a = np.asarray(a, dtype=complex)
    if a.size == 0:
        return 0.0
    gram = a.conj().T @ a
    d = gram.shape[0]
    # Deterministic start vector with a mild ramp so it is never orthogonal
    # to the dominant eigenvector by symmetry accidents.
    v = np.ones(d, dtype=complex) + np.linspace(0.0, 0.5, d)
    v /= np.linalg.norm(v)
    lam_old = 0.0
    for _ in range(SPECTRAL_MAX_ITER):
        w = gram @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam = float(np.real(np.vdot(v, gram @ v)))
        if abs(lam - lam_old) <= SPECTRAL_TOL * max(lam, 1e-300):
            return float(np.sqrt(max(lam, 0.0)))
        lam_old = lam
    evals = np.linalg.eigvalsh(gram)
    return float(np.sqrt(max(float(evals[-1]), 0.0)))


def norm(a: np.ndarray, kind: str = "frobenius") -> float:
    """Matrix norm dispatcher: ``frobenius`` (default) or ``spectral``."""
    if kind == "frobenius":
        return frobenius_norm(a)
    if kind == "spectral":
        return spectral_norm(a)
    raise ValueError(f"unknown norm kind {kind!r}")


@dataclass(frozen=True)
class HermitianEigen:
    """Eigendecomposition A = Q diag(values) Q† of a Hermitian operator."""

    values: np.ndarray  # real, ascending
    vectors: np.ndarray  # unitary, columns are eigenvectors

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.vectors * self.values) @ self.vectors.conj().T


def hermitian_eigendecompose(a: np.ndarray) -> HermitianEigen:
    """Eigendecompose a Hermitian operator, rejecting non-Hermitian input.

    Input is symmetrized as (A + A†)/2 before the solve; inputs whose
    anti-Hermitian part exceeds ``HERMITIAN_RTOL`` relative Frobenius norm are
    rejected instead of silently symmetrized away.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = frobenius_norm(a)
    skew = frobenius_norm(a - a.conj().T)
    if scale > 0.0 and skew > HERMITIAN_RTOL * scale:
        raise ValueError(
            f"operator is not Hermitian: ||A - A'||_F = {skew:.3e} "
            f"exceeds {HERMITIAN_RTOL:.0e} * ||A||_F = {HERMITIAN_RTOL * scale:.3e}"
        )
    sym = 0.5 * (a + a.conj().T)
    values, vectors = np.linalg.eigh(sym)
    eig = HermitianEigen(values=values, vectors=vectors)
    resid = frobenius_norm(eig.reconstruct() - sym)
    if scale > 0.0 and resid > EIGEN_RESIDUAL_RTOL * scale:
        raise ArithmeticError(
            f"eigendecomposition residual {resid:.3e} exceeds "
            f"{EIGEN_RESIDUAL_RTOL:.0e} * ||A||_F"
        )
    return eig


def evolve_unitary(a: np.ndarray | HermitianEigen, t: float) -> np.ndarray:
    """Exact propagator U = exp(-i A t) of a Hermitian generator.

    Accepts either the operator itself or a precomputed
    :class:`HermitianEigen` so callers evolving the same generator at many
    times can reuse the eigenbasis.
    """
    eig = a if isinstance(a, HermitianEigen) else hermitian_eigendecompose(a)
    phases = np.exp(-1j * eig.values * t)
    return (eig.vectors * phases) @ eig.vectors.conj().T


def haar_state(d: int, seed: int) -> np.ndarray:
    """Haar-random pure state of dimension d (normalized complex Gaussian)."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    rng = make_rng(seed)
    vec = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return vec / np.linalg.norm(vec)


def haar_state_from_rng(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random state drawn from an existing generator (for sample loops)."""
    vec = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return vec / np.linalg.norm(vec)


def haar_su2(seed: int | None = None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Haar-random 2x2 unitary, from a seed or an existing generator."""
    if rng is None:
        rng = make_rng(0 if seed is None else seed)
    return haar_unitary_from_rng(2, rng)


def haar_unitary_from_rng(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random d x d unitary via QR of a complex Ginibre matrix.

    The R-diagonal phase fix makes the QR-induced distribution exactly Haar
    (Mezzadri's construction).
    """
    z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r)
    phases = diag / np.abs(diag)
    return q * phases


def svd_truncate(
    a: np.ndarray, max_rank: int, cutoff: float = 0.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Truncated SVD with a deterministic sign/phase gauge.

    Keeps at most ``max_rank`` singular values and drops any value below
    ``cutoff * s_max``. Each retained singular pair is rotated so that the
    largest-magnitude entry of the left singular vector is real positive;
    this removes the phase ambiguity of the SVD so repeated factorizations of
    nearly identical matrices give nearly identical factors (needed by the
    iTEBD convergence monitor and golden tests).
    """
    if max_rank < 1:
        raise ValueError(f"max_rank must be >= 1, got {max_rank}")
    u, s, vh = np.linalg.svd(np.asarray(a, dtype=complex), full_matrices=False)
    keep = min(max_rank, s.shape[0])
    if s.shape[0] and cutoff > 0.0:
        thresh = cutoff * s[0]
        keep = min(keep, int(np.count_nonzero(s > thresh)))
        keep = max(keep, 1)
    u, s, vh = u[:, :keep], s[:keep], vh[:keep, :]
    # Deterministic gauge: pivot entry of each left vector made real positive.
    for i in range(keep):
        j = int(np.argmax(np.abs(u[:, i])))
        pivot = u[j, i]
        if pivot != 0.0:
            phase = pivot / abs(pivot)
            u[:, i] = u[:, i] / phase
            vh[i, :] = vh[i, :] * phase
    return u, s, vh


def fit_line(x, y) -> tuple[float, float, float]:
    """Least-squares line y = a x + b; returns (slope, intercept, r_squared)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    ss_res = float(np.sum(residual**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    return float(slope), float(intercept), r_squared


def fit_line_through_origin(x, y) -> tuple[float, float]:
    """Least-squares line y = a x; returns (slope, r_squared)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope = float(x @ y / (x @ x))
    residual = y - slope * x
    ss_res = float(np.sum(residual**2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 1.0
    return slope, r_squared
