"""Mixtures of product-formula unitaries and their Haar-averaged loss.

The central object is the channel ``rho -> sum_m p_m U_m rho U_m^dag`` built
from M product-formula unitaries with weights on the simplex. Its figure of
merit against the exact propagator V is the Haar average

    L_F = E_psi || sum_m p_m U_m |psi><psi| U_m^dag - V |psi><psi| V^dag ||_F^2 .

``loss_analytic`` evaluates the closed form, which only involves the traces
Tr(U_m^dag V) and Tr(U_m^dag U_n). Writing D_m = U_m - V and tau = Tr(W) - d
for each of those unitary products, the closed form collapses to

    L_F = sum_{mn} p_m p_n g(tau_mn) - 2 sum_m p_m g(tau_m),
    g(tau) = (2 Re tau + |tau|^2 / d) / (d + 1),

with tau_m = Tr(D_m^dag V) and tau_mn = tau_m + conj(tau_n) + Tr(D_m^dag D_n).
This is algebraically identical to evaluating the trace formula directly but
never subtracts O(1) quantities, so losses far below machine epsilon relative
to the naive evaluation (e.g. 1e-18 for near-cancelling mixtures) keep their
leading digits. The quadratic-form structure in the weights is exposed through
:class:`LossTables` so weight scans reuse one set of traces.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .formulas import Circuit, GroupEvolver, all_orderings, compile_unitary, make_formula
from .hamiltonians import HamiltonianSpec, group_dense, group_weight_squares, total_dense
from .linalg import (
    commutator,
    evolve_unitary,
    frobenius_norm,
    hermitian_eigendecompose,
    make_rng,
)

WEIGHT_SUM_TOL = 1e-12
UNITARITY_RTOL = 1e-8
NEGATIVE_LOSS_CLAMP = 1e-12
GRID_EVAL_CAP = 2_200_000


@dataclass(frozen=True)
class MixedChannel:
    """M unitaries with simplex weights, applied as a mixed-unitary channel."""

    unitaries: tuple[np.ndarray, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if len(self.unitaries) != len(self.weights):
            raise ValueError("need one weight per unitary")
        if len(self.unitaries) == 0:
            raise ValueError("channel needs at least one unitary")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if abs(sum(self.weights) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {sum(self.weights)!r}, expected 1")
        d = self.unitaries[0].shape[0]
        eye = np.eye(d)
        for u in self.unitaries:
            if u.shape != (d, d):
                raise ValueError("all unitaries must share one dimension")
            defect = frobenius_norm(u.conj().T @ u - eye)
            if defect > UNITARITY_RTOL * math.sqrt(d):
                raise ValueError(f"matrix is not unitary (defect {defect:.3e})")

    @property
    def dim(self) -> int:
        return self.unitaries[0].shape[0]

    @property
    def size(self) -> int:
        return len(self.unitaries)


@dataclass(frozen=True)
class LossReport:
    value: float
    method: str
    samples: int = 0
    seed: int = 0
    stderr: float = 0.0


def _clamp_loss(value: float) -> float:
    if value < 0.0:
        if value < -NEGATIVE_LOSS_CLAMP:
            raise ArithmeticError(f"loss came out negative beyond tolerance: {value!r}")
        return 0.0
    return float(value)


class LossTables:
    """Haar-loss quadratic form L(w) = w.G w - 2 g.w over channel weights.

    Built once per (unitaries, target) pair; evaluating the loss for any
    weight vector, or for a whole array of them, is then O(M^2) per vector.
    """

    def __init__(self, unitaries, target: np.ndarray):
        d = target.shape[0]
        m = len(unitaries)
        devs = [np.asarray(u, dtype=complex) - target for u in unitaries]
        tau_v = np.array([np.trace(dev.conj().T @ target) for dev in devs])
        tau_pair = np.empty((m, m), dtype=complex)
        for i in range(m):
            for j in range(i, m):
                tau_pair[i, j] = (
                    tau_v[i] + np.conj(tau_v[j]) + np.trace(devs[i].conj().T @ devs[j])
                )
                tau_pair[j, i] = np.conj(tau_pair[i, j])

        def g(tau):
            return (2.0 * np.real(tau) + np.abs(tau) ** 2 / d) / (d + 1.0)

        self.dim = d
        self.size = m
        self.pair_matrix = np.real(g(tau_pair))
        self.target_vector = np.real(g(tau_v))

    def loss(self, weights) -> float:
        w = np.asarray(weights, dtype=float)
        return _clamp_loss(float(w @ self.pair_matrix @ w - 2.0 * self.target_vector @ w))

    def loss_batch(self, weight_rows: np.ndarray) -> np.ndarray:
        w = np.asarray(weight_rows, dtype=float)
        quad = np.einsum("km,mn,kn->k", w, self.pair_matrix, w, optimize=True)
        vals = quad - 2.0 * (w @ self.target_vector)
        return np.maximum(vals, 0.0)


def loss_analytic(channel: MixedChannel, target: np.ndarray) -> LossReport:
    """Exact Haar-averaged loss of the channel against the target unitary."""
    if target.shape != (channel.dim, channel.dim):
        raise ValueError("target dimension does not match the channel")
    tables = LossTables(channel.unitaries, target)
    return LossReport(value=tables.loss(channel.weights), method="analytic")


def _state_overlap_tables(unitaries, target, states):
    """Per-sample overlap tables for the Monte-Carlo loss.

    For each Haar state, the deviation norm only involves |<u_m|u_n>|^2 and
    |<u_m|v>|^2 with u_m = U_m psi, v = V psi; both are returned as
    (samples, M, M) and (samples, M) arrays.
    """
    evolved = [np.asarray(u) @ states for u in unitaries]  # each (d, S)
    v = target @ states
    m = len(unitaries)
    s = states.shape[1]
    pair = np.empty((s, m, m), dtype=float)
    tgt = np.empty((s, m), dtype=float)
    for i in range(m):
        tgt[:, i] = np.abs(np.einsum("ds,ds->s", evolved[i].conj(), v)) ** 2
        pair[:, i, i] = 1.0
        for j in range(i + 1, m):
            val = np.abs(np.einsum("ds,ds->s", evolved[i].conj(), evolved[j])) ** 2
            pair[:, i, j] = val
            pair[:, j, i] = val
    return pair, tgt


def loss_monte_carlo(
    channel: MixedChannel, target: np.ndarray, samples: int, seed: int
) -> LossReport:
    """Haar-sampled estimate of the loss with its standard error."""
    if target.shape != (channel.dim, channel.dim):
        raise ValueError("target dimension does not match the channel")
    if samples < 2:
        raise ValueError("need at least 2 samples for a standard error")
    d = channel.dim
    rng = make_rng(seed)
    states = rng.standard_normal((d, samples)) + 1j * rng.standard_normal((d, samples))
    states /= np.linalg.norm(states, axis=0)
    pair, tgt = _state_overlap_tables(channel.unitaries, target, states)
    w = np.asarray(channel.weights)
    per_state = np.einsum("smn,m,n->s", pair, w, w) - 2.0 * (tgt @ w) + 1.0
    mean = float(np.mean(per_state))
    stderr = float(np.std(per_state, ddof=1) / math.sqrt(samples))
    return LossReport(
        value=_clamp_loss(mean),
        method="monte_carlo",
        samples=samples,
        seed=seed,
        stderr=stderr,
    )


def richardson_coefficient(u_of_t, v_of_t, q: int, t0: float, rtol: float = 0.01):
    """Leading Taylor coefficient E^(q) of i*(V(t) - U(t)) = sum_s E^(s) t^s.

    The sign convention follows the closed-form error expressions (the k=1
    pair coefficient is +(i/2)[A,B] for the A-then-B ordering), so the
    extrapolated and analytic paths can be compared directly.

    Evaluates f(t) = i (V(t) - U(t)) / t^q at t0, t0/2, t0/4 and extrapolates
    the quadratic Lagrange polynomial to t = 0, killing the t and t^2
    contamination. The self-check compares against the two-node extrapolation
    and rejects results whose relative gap exceeds ``rtol``; a rounding-noise
    floor keeps identically vanishing coefficients (commuting groups) from
    tripping the relative check on pure noise.
    """
    f = [
        1j * (v_of_t(t) - u_of_t(t)) / t**q
        for t in (t0, t0 / 2.0, t0 / 4.0)
    ]
    three_node = f[0] / 3.0 - 2.0 * f[1] + (8.0 / 3.0) * f[2]
    two_node = 2.0 * f[2] - f[1]
    scale = frobenius_norm(three_node)
    gap = frobenius_norm(three_node - two_node)
    noise_floor = 1e4 * np.finfo(float).eps * three_node.shape[0] / t0**q
    if scale <= noise_floor and gap <= noise_floor:
        return three_node, 0.0
    if gap > rtol * scale:
        raise ArithmeticError(
            f"extrapolation self-check failed: relative gap {gap / scale:.3e} exceeds "
            f"{rtol:.0e}; try a smaller t0 (used {t0:.3e}) if higher-order terms "
            "dominate, or a larger t0 if the difference U - V is near the rounding "
            f"floor (typical for large q; here q={q})"
        )
    return three_node, gap / scale


def leading_error_coefficient(
    circuit: Circuit,
    spec: HamiltonianSpec,
    q: int,
    t0: float | None = None,
    rtol: float = 0.01,
) -> np.ndarray:
    """E^(q) of one formula block against exact evolution of the full H.

    ``q`` is the leading error order of the circuit (k + 1 for order k). The
    default base step keeps ||H||_F * t0 <= 0.1; pass a larger t0 explicitly
    when extracting very high orders whose signal would otherwise drown in
    rounding noise (the self-check still guards the result).
    """
    h_eig = hermitian_eigendecompose(total_dense(spec))
    evolver = GroupEvolver.from_spec(spec)
    if t0 is None:
        h_norm = frobenius_norm(h_eig.reconstruct())
        t0 = 0.1 / h_norm if h_norm > 0 else 0.1
    coeff, _ = richardson_coefficient(
        lambda t: compile_unitary(circuit, evolver, t),
        lambda t: evolve_unitary(h_eig, t),
        q,
        t0,
        rtol,
    )
    return coeff


def second_order_error_coefficient(groups, ordering) -> np.ndarray:
    """Third-order error coefficient of one S2 block from nested commutators.

    For groups applied in the order H_{g1}, H_{g2}, ..., the coefficient of
    t^3 in the error expansion is

        (1/24) sum_{a} [ H_a + 2 sum_{b after a} H_b , [ sum_{c after a} H_c , H_a ] ].
    """
    seq = [np.asarray(groups[g], dtype=complex) for g in ordering]
    total = np.zeros_like(seq[0])
    for i, h_a in enumerate(seq):
        later = seq[i + 1 :]
        if not later:
            continue
        tail = np.sum(later, axis=0)
        total += commutator(h_a + 2.0 * tail, commutator(tail, h_a))
    return total / 24.0


def analytic_third_order(
    spec: HamiltonianSpec, ordering=None, p: float | None = None
) -> np.ndarray:
    """Closed-form third-order error coefficient for order-2 formulas.

    With two groups (A, B) and a mixing weight p on the A-outside block
    (1 - p on the B-outside block), the weighted coefficient is

        E3(p) = (1/24) [ (2 - 3p) A + (1 - 3p) B , [A, B] ].

    With ``p = None`` the equal-weight average over all Gamma! orderings is
    returned, each ordering contributing its nested-commutator coefficient.
    """
    groups = group_dense(spec)
    if p is not None:
        if spec.num_groups != 2:
            raise ValueError("the weighted closed form needs exactly two groups")
        if ordering is None:
            ordering = (0, 1)
        a, b = groups[ordering[0]], groups[ordering[1]]
        return commutator((2.0 - 3.0 * p) * a + (1.0 - 3.0 * p) * b, commutator(a, b)) / 24.0
    orderings = [tuple(ordering)] if ordering is not None else all_orderings(spec.num_groups)
    total = np.zeros_like(groups[0])
    for perm in orderings:
        total += second_order_error_coefficient(groups, perm)
    return total / len(orderings)


@dataclass(frozen=True)
class TwoTermOptimum:
    """Closed-form optimal weight for a two-group order-2 mixture.

    ``ratio_vs_a_outside`` and ``ratio_vs_b_outside`` are the minimized
    ||E3||^2 relative to the pure A-outside (p=1) and pure B-outside (p=0)
    blocks respectively.
    """

    p_opt: float
    min_value: float  # J_A^2 J_B^2 / (J_A^2 + J_B^2), bare-coefficient units
    ratio_vs_a_outside: float
    ratio_vs_b_outside: float


def optimal_weight_two_term(spec: HamiltonianSpec) -> TwoTermOptimum:
    """Lemma-style optimum p = (2 J_A^2 + J_B^2) / (3 (J_A^2 + J_B^2))."""
    if spec.num_groups != 2:
        raise ValueError("closed-form optimum needs exactly two groups")
    weights = group_weight_squares(spec)
    ja2, jb2 = (weights[name] for name in spec.group_names())
    total = ja2 + jb2
    if total == 0.0:
        raise ValueError("both groups have zero weight")
    p_opt = (2.0 * ja2 + jb2) / (3.0 * total)
    min_value = ja2 * jb2 / total
    return TwoTermOptimum(
        p_opt=p_opt,
        min_value=min_value,
        ratio_vs_a_outside=min_value / (ja2 + 4.0 * jb2) if ja2 + 4.0 * jb2 else 0.0,
        ratio_vs_b_outside=min_value / (4.0 * ja2 + jb2) if 4.0 * ja2 + jb2 else 0.0,
    )


@dataclass(frozen=True)
class GridSearchResult:
    weights: tuple[float, ...]
    loss: float
    rows: list  # (weights tuple, loss, stderr) per simplex point, scan order


def simplex_grid(size: int, resolution: int) -> np.ndarray:
    """Normalized weight rows from the integer grid {0..resolution}^M \\ {0}."""
    count = (resolution + 1) ** size
    if count > GRID_EVAL_CAP:
        raise ValueError(
            f"grid of {count} points exceeds the cap of {GRID_EVAL_CAP}; "
            "reduce the resolution or the number of formulas"
        )
    axes = np.arange(resolution + 1, dtype=float)
    mesh = np.stack(np.meshgrid(*([axes] * size), indexing="ij"), axis=-1)
    rows = mesh.reshape(-1, size)
    rows = rows[rows.sum(axis=1) > 0]
    # Normalization collapses collinear integer points (e.g. (1,1) and (2,2))
    # onto one simplex point; deduplicate so ties break lexicographically.
    return np.unique(rows / rows.sum(axis=1, keepdims=True), axis=0)


def grid_search_weights(
    circuits,
    spec: HamiltonianSpec,
    t: float,
    resolution: int = 10,
    loss: str = "analytic",
    samples: int = 1000,
    seed: int = 0,
) -> GridSearchResult:
    """Simplex grid search for the loss-minimizing mixture weights.

    Compiles each circuit at time t, builds the loss quadratic form once
    (analytically, or from Haar-sample overlap tables for the Monte-Carlo
    variant), and scans every normalized grid point. Ties keep the first
    point in scan (lexicographic) order.
    """
    evolver = GroupEvolver.from_spec(spec)
    h_eig = hermitian_eigendecompose(sum(group_dense(spec)))
    unitaries = [compile_unitary(c, evolver, t) for c in circuits]
    target = evolve_unitary(h_eig, t)
    rows = simplex_grid(len(unitaries), resolution)

    if loss == "analytic":
        tables = LossTables(unitaries, target)
        values = tables.loss_batch(rows)
        stderrs = np.zeros_like(values)
    elif loss == "monte_carlo":
        if rows.shape[0] * samples > 2e8:
            raise ValueError(
                "monte_carlo grid search too large; use loss='analytic' for big scans"
            )
        d = target.shape[0]
        rng = make_rng(seed)
        states = rng.standard_normal((d, samples)) + 1j * rng.standard_normal((d, samples))
        states /= np.linalg.norm(states, axis=0)
        pair, tgt = _state_overlap_tables(unitaries, target, states)
        per_state = (
            np.einsum("smn,km,kn->ks", pair, rows, rows, optimize=True)
            - 2.0 * np.einsum("sm,km->ks", tgt, rows, optimize=True)
            + 1.0
        )
        values = np.maximum(per_state.mean(axis=1), 0.0)
        stderrs = per_state.std(axis=1, ddof=1) / math.sqrt(samples)
    else:
        raise ValueError(f"unknown loss method {loss!r}")

    best = int(np.argmin(values))
    rows_out = [
        (tuple(rows[i]), float(values[i]), float(stderrs[i]))
        for i in range(rows.shape[0])
    ]
    return GridSearchResult(
        weights=tuple(rows[best]), loss=float(values[best]), rows=rows_out
    )


def ordering_channel(
    spec: HamiltonianSpec,
    order: int,
    t: float,
    n_steps: int = 1,
    orderings=None,
    weights=None,
) -> tuple[MixedChannel, np.ndarray]:
    """Convenience builder: mixture of N-step formula circuits over orderings.

    Returns the channel and the exact propagator for the same total time.
    Default orderings are all permutations with equal weights.
    """
    from .formulas import repeat_steps

    if orderings is None:
        orderings = all_orderings(spec.num_groups)
    orderings = [tuple(o) for o in orderings]
    if weights is None:
        weights = [1.0 / len(orderings)] * len(orderings)
    evolver = GroupEvolver.from_spec(spec)
    h_eig = hermitian_eigendecompose(sum(group_dense(spec)))
    dt = t / n_steps
    unitaries = []
    for perm in orderings:
        step = compile_unitary(make_formula(order, perm), evolver, dt)
        unitaries.append(repeat_steps(step, n_steps) if n_steps > 1 else step)
    channel = MixedChannel(unitaries=tuple(unitaries), weights=tuple(weights))
    return channel, evolve_unitary(h_eig, t)
