"""Random-ordering sampling estimator and fluctuation-bound validation.

This module implements the randomized product-formula protocol in which
every evolution step applies a single-ordering circuit drawn uniformly at
random from all group permutations.  The deviation of the empirical average
of ``trials`` such evolutions from its exact expectation is the fluctuation
error; a matrix concentration inequality bounds its spectral norm with
probability ``1 - delta``.  The helpers here compute the observed
fluctuation norm exactly (small group counts only) and the corresponding
concentration bound so the two can be compared trial by trial.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channels import leading_error_coefficient
from .commutant import decompose_commuting
from .formulas import (
    GroupEvolver,
    all_orderings,
    compile_unitary,
    make_formula,
)
from .hamiltonians import HamiltonianSpec, total_dense
from .linalg import make_rng, spectral_norm

__all__ = [
    "EXACT_MEAN_MAX_GROUPS",
    "FluctuationTrial",
    "bernstein_epsilon",
    "compute_gamma",
    "fluctuation_norm",
    "sample_orderings",
]

# Exact expectation over orderings is only tractable when the number of
# permutations stays small; beyond 4 groups (24 orderings) validation against
# the exact mean is refused rather than silently approximated.
EXACT_MEAN_MAX_GROUPS = 4


@dataclass(frozen=True)
class FluctuationTrial:
    """One randomized-evolution experiment compared against its bound.

    Attributes:
        trials: Number of independent randomized evolutions averaged (T).
        n_steps: Number of time steps per evolution (N).
        t: Total evolution time.
        q: Leading error order of the per-step circuit.
        gamma: Per-step error-magnitude constant used in the bound.
        delta: Failure probability the bound is inverted at.
        observed_norm: Spectral norm of the realized fluctuation error.
        bound_epsilon: Concentration bound at confidence ``1 - delta``.
        seed: Seed that generated the ordering draws.
    """

    trials: int
    n_steps: int
    t: float
    q: int
    gamma: float
    delta: float
    observed_norm: float
    bound_epsilon: float
    seed: int

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.observed_norm < 0:
            raise ValueError(
                f"observed_norm must be nonnegative, got {self.observed_norm}"
            )

    @property
    def violated(self) -> bool:
        """Whether the realized fluctuation exceeded the bound."""
        return self.observed_norm > self.bound_epsilon


def sample_orderings(
    num_groups: int, trials: int, seed: int
) -> list[tuple[int, ...]]:
    """Draw ``trials`` orderings uniformly with replacement.

    Args:
        num_groups: Number of Hamiltonian groups to permute.
        trials: Number of independent draws.
        seed: Seed for the deterministic counter-based generator.

    Returns:
        List of ``trials`` permutations of ``range(num_groups)``.

    Raises:
        ValueError: If ``num_groups < 1`` or ``trials < 0``.
    """
    if num_groups < 1:
        raise ValueError(f"num_groups must be >= 1, got {num_groups}")
    if trials < 0:
        raise ValueError(f"trials must be nonnegative, got {trials}")
    pool = all_orderings(num_groups, cap=math.factorial(num_groups))
    rng = make_rng(seed)
    indices = rng.integers(0, len(pool), size=trials)
    return [pool[i] for i in indices]


def bernstein_epsilon(
    trials: int,
    n_steps: int,
    t: float,
    q: int,
    gamma: float,
    n: int,
    delta: float,
) -> float:
    """Invert the fluctuation concentration bound for its error level.

    Solves ``2 d exp(-3 T^2 N^(2q-1) eps^2 / (8 gamma^2 t^(2q))) = delta``
    for ``eps`` with ``d = 2^n``, so that the spectral norm of the
    fluctuation error stays below the returned value with probability at
    least ``1 - delta``.

    Args:
        trials: Number of averaged randomized evolutions (T).
        n_steps: Steps per evolution (N).
        t: Total evolution time.
        q: Leading error order of the per-step circuit.
        gamma: Max over orderings of the per-step error coefficient's
            spectral norm plus that of its commuting part.
        n: Number of qubits (sets the dimension ``d = 2^n``).
        delta: Allowed failure probability, strictly inside (0, 1).

    Returns:
        The bound on the fluctuation error's spectral norm.

    Raises:
        ValueError: If ``delta`` is outside (0, 1) or any size or scale
            argument is nonpositive.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie strictly in (0, 1), got {delta}")
    for name, value in (
        ("trials", trials),
        ("n_steps", n_steps),
        ("t", t),
        ("q", q),
        ("gamma", gamma),
        ("n", n),
    ):
        if value <= 0:
            raise ValueError(f"{name} must be positive, got {value}")
    dim = 2.0**n
    log_term = math.log(2.0 * dim / delta)
    scale = gamma * t**q / (trials * n_steps ** ((2 * q - 1) / 2.0))
    return scale * math.sqrt(8.0 * log_term / 3.0)


def compute_gamma(
    spec: HamiltonianSpec, order: int, t0: float | None = None
) -> float:
    """Compute the per-step error-magnitude constant for the bound.

    For every ordering of the groups, extracts the leading error
    coefficient of the single-step circuit, splits off the part commuting
    with the full Hamiltonian, and sums the two spectral norms.  The
    maximum over orderings is the constant the concentration bound uses.

    Args:
        spec: Grouped Hamiltonian description.
        order: Product-formula order of the per-step circuit.
        t0: Optional base duration for the error extraction.

    Returns:
        ``max_m(||E_m||_2 + ||xi_m||_2)`` over all group orderings.
    """
    q = order + 1
    hamiltonian = total_dense(spec)
    best = 0.0
    for ordering in all_orderings(spec.num_groups):
        circuit = make_formula(order, ordering)
        coefficient = leading_error_coefficient(circuit, spec, q, t0=t0)
        split = decompose_commuting(coefficient, hamiltonian)
        value = spectral_norm(coefficient) + spectral_norm(split.xi)
        best = max(best, value)
    return best


def fluctuation_norm(
    spec: HamiltonianSpec,
    order: int,
    trials: int,
    n_steps: int,
    t: float,
    seed: int,
    *,
    gamma: float | None = None,
    delta: float = 0.1,
    stratified: bool = False,
) -> FluctuationTrial:
    """Measure the fluctuation error of one randomized-evolution average.

    Runs ``trials`` independent evolutions, each a product of ``n_steps``
    per-step circuits whose group ordering is drawn uniformly at random
    anew for every step.  The empirical average of these evolutions is
    compared in spectral norm against the exact expectation, which equals
    the ``n_steps``-th power of the uniform average of all single-step
    ordering circuits.

    Args:
        spec: Grouped Hamiltonian description.
        order: Product-formula order of the per-step circuit.
        trials: Number of independent randomized evolutions (T).
        n_steps: Steps per evolution (N).
        t: Total evolution time; the step duration is ``t / n_steps``.
        seed: Seed for the ordering draws.
        gamma: Error-magnitude constant for the bound; computed from the
            model when omitted.
        delta: Failure probability the bound is inverted at.
        stratified: Replace random draws by the deterministic balanced
            sequence that cycles through all orderings; with ``trials``
            equal to the number of orderings and a single step this
            reproduces the exact mean and yields zero fluctuation.

    Returns:
        The trial record including the observed norm and its bound.

    Raises:
        ValueError: If the number of group orderings exceeds the exact-mean
            cap of ``factorial(EXACT_MEAN_MAX_GROUPS)``.
    """
    if spec.num_groups > EXACT_MEAN_MAX_GROUPS:
        raise ValueError(
            "exact-mean validation supports at most "
            f"{EXACT_MEAN_MAX_GROUPS} groups "
            f"({math.factorial(EXACT_MEAN_MAX_GROUPS)} orderings); "
            f"got {spec.num_groups} groups"
        )
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")

    orderings = all_orderings(spec.num_groups)
    n_orderings = len(orderings)
    dt = t / n_steps
    evolver = GroupEvolver.from_spec(spec)
    step_unitaries = np.stack(
        [
            compile_unitary(make_formula(order, ordering), evolver, dt)
            for ordering in orderings
        ]
    )
    mean_step = step_unitaries.mean(axis=0)
    exact_mean = np.linalg.matrix_power(mean_step, n_steps)

    if stratified:
        flat = np.arange(trials * n_steps) % n_orderings
        draw_index = flat.reshape(trials, n_steps)
    else:
        rng = make_rng(seed)
        draw_index = rng.integers(0, n_orderings, size=(trials, n_steps))

    dim = step_unitaries.shape[-1]
    running = np.broadcast_to(
        np.eye(dim, dtype=complex), (trials, dim, dim)
    ).copy()
    for step in range(n_steps):
        running = step_unitaries[draw_index[:, step]] @ running
    fluctuation = running.mean(axis=0) - exact_mean
    observed = spectral_norm(fluctuation)

    q = order + 1
    if gamma is None:
        gamma = compute_gamma(spec, order)
    epsilon = bernstein_epsilon(trials, n_steps, t, q, gamma, spec.n, delta)
    return FluctuationTrial(
        trials=trials,
        n_steps=n_steps,
        t=t,
        q=q,
        gamma=gamma,
        delta=delta,
        observed_norm=observed,
        bound_epsilon=epsilon,
        seed=seed,
    )
