"""Imaginary-time evolution of infinite matrix product states.

Ground states and energies of translationally invariant chains are obtained
by applying ``exp(-dtau * h_block)`` gates to a small repeating unit cell and
truncating the bond dimension after each singular value decomposition.  One
iteration applies the gate layers of a product-formula circuit to every
sublattice; the step size ``dtau`` is lowered on a schedule, and convergence
at each step size is declared once the state stops moving between
iterations.  Averaged modes run two term orderings side by side with equal
weights and measure convergence on the combined object, which settles much
faster than either trajectory alone because the orderings' leading
step-size errors cancel in the average.

Representation.  The unit cell stores one three-index tensor per site in
right-weighted form: ``site_tensors[r]`` equals the bare decomposition
tensor with ``diag(schmidt_vectors[r])`` absorbed on its right bond, so in a
well-gauged state it is right-orthonormal, and ``schmidt_vectors[r]`` holds
the Schmidt coefficients of the bond to the right of site ``r``.  Gate
updates use the inverse-free variant for the outer tensors; only the
three-site update inverts the freshly computed central Schmidt vector, with
values below a relative floor zeroed.

Convergence distance.  The monitored object is the reduced density matrix
of a window of two unit cells.  Because repeated truncated updates let the
stored tensors drift away from canonical form, the window matrix is
contracted against the dominant left and right environments of the cell
transfer operator (kept current by a warm-started power iteration) rather
than against the stored Schmidt weights; this makes both the distance and
the logged energy properties of the represented physical state, independent
of the internal gauge.  For averaged modes the monitored matrix is the
weighted mixture of the trajectories' window matrices.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .formulas import make_formula
from .hamiltonians import PAULI_MATRICES, PauliTerm, build_model
from .linalg import make_rng, svd_truncate

__all__ = [
    "CANONICAL_RESIDUAL_TOL",
    "COMBINE_MODES",
    "DEFAULT_BOND_DIM",
    "DEFAULT_CUTOFF",
    "FORMULA_MODES",
    "ITEBD_MODELS",
    "ConvergenceSchedule",
    "EDReference",
    "IterationRecord",
    "LocalModel",
    "MPSUnitCell",
    "ScheduleResult",
    "canonical_residual",
    "canonicalize",
    "ed_reference_energy",
    "energy_density",
    "imaginary_step",
    "init_stabilizer_cell",
    "init_unit_cell",
    "local_model",
    "run_schedule",
    "settled_iteration",
]

DEFAULT_BOND_DIM = 32
DEFAULT_CUTOFF = 1e-12
DEFAULT_DTAU_LIST = (0.1, 0.01, 0.001)
DEFAULT_THRESHOLD = 1e-10
DEFAULT_MAX_ITERATIONS = 100_000
SCHMIDT_NORM_TOL = 1e-10
CANONICAL_RESIDUAL_TOL = 1e-6
TRUNCATION_WARN_WEIGHT = 1e-2
INIT_NOISE = 1e-2
GAUGE_SWEEP_LIMIT = 500
GAUGE_SWEEP_TOL = 1e-8
INVERSE_REL_FLOOR = 1e-12
SAME_STATE_OVERLAP_TOL = 1e-8
ENV_POWER_TOL = 1e-12
ENV_POWER_LIMIT = 400
ENV_POWER_WARM_LIMIT = 6
STABILIZER_STRENGTH = 5.0
STABILIZER_SWEEPS = 4

FORMULA_MODES = ("k1", "k2", "k4", "averaged_k1", "averaged_k2")
COMBINE_MODES = ("trajectories", "lcu")
ITEBD_MODELS = ("heisenberg_nn", "cluster_spt", "zxz_field")


@dataclass(frozen=True)
class LocalModel:
    """Translationally invariant chain model in local-block form.

    Attributes:
        name: Model identifier.
        cell_size: Sites per unit cell (2 or 3), equal to the block width.
        block: Dense Hermitian block acting on ``cell_size`` adjacent sites;
            the chain Hamiltonian is the sum of this block started at every
            site.
        block_starts: For each formula group index, the cell offset at which
            that group's commuting blocks start.
        params: Model parameters, for provenance.
    """

    name: str
    cell_size: int
    block: np.ndarray
    block_starts: tuple[int, ...]
    params: dict

    @property
    def num_groups(self) -> int:
        return len(self.block_starts)


def _kron_chain(letters: str) -> np.ndarray:
    out = PAULI_MATRICES[letters[0]]
    for letter in letters[1:]:
        out = np.kron(out, PAULI_MATRICES[letter])
    return out


def local_model(name: str, **params) -> LocalModel:
    """Build a supported chain model in local-block form.

    ``heisenberg_nn`` is the nearest-neighbour model with bond operator
    ``XX + YY + ZZ`` on a two-site cell (groups: even bonds, odd bonds).
    ``cluster_spt`` (parameters J, V, h) and ``zxz_field`` are three-site
    models whose block centred on the middle site carries the three-body
    string, the two-body term on the centre-right pair, and the field on the
    centre, matching the finite-chain builders used by the exact
    diagonalization oracle.

    Raises:
        ValueError: For an unknown model name.
    """
    if name == "heisenberg_nn":
        block = (
            _kron_chain("XX") + _kron_chain("YY") + _kron_chain("ZZ")
        )
        return LocalModel(
            name=name,
            cell_size=2,
            block=block,
            block_starts=(0, 1),
            params=dict(params),
        )
    if name == "cluster_spt":
        j = float(params.get("J", 1.0))
        v = float(params.get("V", -1.0))
        h = float(params.get("h", 1.0))
        block = (
            -j * _kron_chain("ZXZ")
            - v * _kron_chain("IXX")
            - h * _kron_chain("IXI")
        )
        return LocalModel(
            name=name,
            cell_size=3,
            block=block,
            block_starts=(2, 0, 1),
            params={"J": j, "V": v, "h": h},
        )
    if name == "zxz_field":
        block = -_kron_chain("ZXZ") - _kron_chain("IYI")
        return LocalModel(
            name=name,
            cell_size=3,
            block=block,
            block_starts=(2, 0, 1),
            params={},
        )
    raise ValueError(f"unknown model {name!r}; expected one of {ITEBD_MODELS}")


@dataclass(frozen=True)
class ConvergenceSchedule:
    """Step-size schedule and stopping rule for imaginary-time evolution.

    Attributes:
        dtau_list: Strictly descending positive step sizes, visited in
            order; convergence at one step size advances to the next.
        threshold: Per-iteration state-distance threshold declaring
            convergence at the current step size.
        max_iterations: Iteration cap per step size.
    """

    dtau_list: tuple[float, ...] = DEFAULT_DTAU_LIST
    threshold: float = DEFAULT_THRESHOLD
    max_iterations: int = DEFAULT_MAX_ITERATIONS

    def __post_init__(self) -> None:
        if not self.dtau_list:
            raise ValueError("dtau_list must be non-empty")
        if any(d <= 0 for d in self.dtau_list):
            raise ValueError(f"step sizes must be positive: {self.dtau_list}")
        for earlier, later in zip(self.dtau_list, self.dtau_list[1:]):
            if later >= earlier:
                raise ValueError(
                    f"dtau_list must be strictly descending: {self.dtau_list}"
                )
        if self.threshold <= 0:
            raise ValueError(f"threshold must be positive: {self.threshold}")
        if self.max_iterations < 1:
            raise ValueError(
                f"max_iterations must be >= 1: {self.max_iterations}"
            )


@dataclass
class MPSUnitCell:
    """Infinite MPS unit cell in right-weighted form.

    Attributes:
        cell_size: Number of sites in the repeating cell.
        site_tensors: One ``(left_bond, 2, right_bond)`` tensor per site
            with the right bond's Schmidt weights absorbed (right-canonical
            in a well-gauged state).
        schmidt_vectors: Non-negative descending Schmidt coefficients of the
            bond to the right of each site, normalized to unit 2-norm.
    """

    cell_size: int
    site_tensors: list[np.ndarray]
    schmidt_vectors: list[np.ndarray]

    def validate(self) -> None:
        """Check structural invariants; raises ValueError on violation."""
        if self.cell_size not in (2, 3):
            raise ValueError(f"cell_size must be 2 or 3, got {self.cell_size}")
        if (
            len(self.site_tensors) != self.cell_size
            or len(self.schmidt_vectors) != self.cell_size
        ):
            raise ValueError("one tensor and one Schmidt vector per site")
        for r, weights in enumerate(self.schmidt_vectors):
            if np.any(weights < 0):
                raise ValueError(f"negative Schmidt value on bond {r}")
            if np.any(np.diff(weights) > 0):
                raise ValueError(f"Schmidt values on bond {r} not descending")
            norm = float(np.sum(weights**2))
            if abs(norm - 1.0) > SCHMIDT_NORM_TOL:
                raise ValueError(
                    f"Schmidt vector on bond {r} has squared norm {norm}"
                )
        for r, tensor in enumerate(self.site_tensors):
            left = self.site_tensors[r - 1].shape[2]
            if tensor.shape[0] != left:
                raise ValueError(f"bond mismatch entering site {r}")
            if tensor.shape[2] != self.schmidt_vectors[r].shape[0]:
                raise ValueError(f"bond mismatch leaving site {r}")

    @property
    def max_bond_dim(self) -> int:
        return max(g.shape[0] for g in self.schmidt_vectors)

    def copy(self) -> "MPSUnitCell":
        return MPSUnitCell(
            cell_size=self.cell_size,
            site_tensors=[t.copy() for t in self.site_tensors],
            schmidt_vectors=[g.copy() for g in self.schmidt_vectors],
        )


def init_unit_cell(cell_size: int, max_bond: int, seed: int) -> MPSUnitCell:
    """Create a noisy product-state unit cell of bond dimension one.

    The base pattern is an alternating up/down product state for two-site
    cells and the uniform plus state for three-site cells; seeded complex
    noise of magnitude 1e-2 breaks symmetries that would otherwise trap the
    imaginary-time flow at unstable fixed points.

    Args:
        cell_size: Sites per unit cell, 2 or 3.
        max_bond: Bond-dimension cap the state will evolve under (validated
            positive here; the initial bond dimension is one).
        seed: Noise seed.

    Raises:
        ValueError: If ``max_bond < 1`` or ``cell_size`` unsupported.
    """
    if max_bond < 1:
        raise ValueError(f"max_bond must be >= 1, got {max_bond}")
    if cell_size == 2:
        base = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    elif cell_size == 3:
        base = [np.array([1.0, 1.0]) / math.sqrt(2.0)] * 3
    else:
        raise ValueError(f"cell_size must be 2 or 3, got {cell_size}")
    rng = make_rng(seed)
    tensors = []
    for vec in base:
        noise = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        site = vec.astype(complex) + INIT_NOISE * noise / math.sqrt(2.0)
        site = site / np.linalg.norm(site)
        tensors.append(site.reshape(1, 2, 1))
    state = MPSUnitCell(
        cell_size=cell_size,
        site_tensors=tensors,
        schmidt_vectors=[np.ones(1) for _ in range(cell_size)],
    )
    state.validate()
    return state


def init_stabilizer_cell(
    max_bond: int,
    seed: int,
    strength: float = STABILIZER_STRENGTH,
    sweeps: int = STABILIZER_SWEEPS,
) -> MPSUnitCell:
    """Three-site cell projected onto the cluster-stabilizer ground space.

    Starts from the noisy plus-state product cell and applies a few strong
    sweeps of ``exp(strength * ZXZ)``, which suppresses the components
    outside the joint +1 eigenspace of the three-body strings by
    ``exp(-2 * strength)`` per sweep.  The result is a low-entanglement
    state already inside the symmetry-protected phase of the three-site
    models; starting the imaginary-time schedule here avoids the long
    transient the flow otherwise spends crossing the phase boundary from
    the trivial product state.

    Raises:
        ValueError: If ``strength`` is not positive or ``sweeps < 1``.
    """
    if strength <= 0:
        raise ValueError(f"strength must be positive: {strength}")
    if sweeps < 1:
        raise ValueError(f"sweeps must be >= 1: {sweeps}")
    state = init_unit_cell(3, max_bond, seed)
    string = _kron_chain("ZXZ").astype(complex)
    gate = math.cosh(strength) * np.eye(
        string.shape[0], dtype=complex
    ) + math.sinh(strength) * string
    for _ in range(sweeps):
        state = imaginary_step(state, gate, "3site", max_bond=max_bond)
    return state


def _theta(state: MPSUnitCell, start: int, width: int) -> np.ndarray:
    """Schmidt-weighted window tensor over ``width`` sites from ``start``.

    Includes the Schmidt weights of the bond entering the window, so with a
    right-canonical cell the contraction of two copies gives the reduced
    density matrix directly.  Returns shape ``(left, 2**width, right)``.
    """
    cell = state.cell_size
    left_weights = state.schmidt_vectors[(start - 1) % cell]
    block = np.diag(left_weights).astype(complex)
    dim_left = block.shape[0]
    for j in range(width):
        tensor = state.site_tensors[(start + j) % cell]
        block = np.tensordot(block, tensor, axes=([block.ndim - 1], [0]))
    return block.reshape(dim_left, 2**width, -1)


def _safe_inverse(values: np.ndarray) -> np.ndarray:
    """Reciprocal with values below a relative floor zeroed."""
    floor = INVERSE_REL_FLOOR * float(values.max(initial=0.0))
    out = np.zeros_like(values)
    mask = values > floor
    out[mask] = 1.0 / values[mask]
    return out


def _apply_block(
    state: MPSUnitCell,
    gate: np.ndarray,
    start: int,
    max_bond: int,
    cutoff: float,
) -> float:
    """Apply a local gate to the block starting at cell offset ``start``.

    Updates the state in place and returns the discarded squared Schmidt
    weight summed over the decompositions.  Two-site gates use one SVD and
    the inverse-free outer update; three-site gates use two SVDs and invert
    only the freshly produced central Schmidt vector (with a relative
    floor).
    """
    cell = state.cell_size
    width = round(math.log2(gate.shape[0]))
    if gate.shape[0] != 2**width or gate.shape[0] != gate.shape[1]:
        raise ValueError(f"gate has non-local shape {gate.shape}")
    sites = [(start + j) % cell for j in range(width)]

    bare = state.site_tensors[sites[0]]
    dim_left = bare.shape[0]
    block = bare
    for j in range(1, width):
        block = np.tensordot(block, state.site_tensors[sites[j]], axes=(
            [block.ndim - 1], [0]))
    bare_theta = block.reshape(dim_left, 2**width, -1)
    dim_right = bare_theta.shape[2]

    bare_gated = np.einsum("pq,aqc->apc", gate, bare_theta)
    left_weights = state.schmidt_vectors[(start - 1) % cell]
    full_gated = left_weights[:, None, None] * bare_gated
    norm = float(np.linalg.norm(full_gated))
    if norm == 0.0:
        raise ArithmeticError("gate annihilated the state")
    full_gated = full_gated / norm
    bare_gated = bare_gated / norm

    if width == 2:
        matrix = full_gated.reshape(dim_left * 2, 2 * dim_right)
        u, s, vh = svd_truncate(matrix, max_bond, cutoff)
        discarded = max(0.0, 1.0 - float(np.sum(s**2)))
        s = s / np.linalg.norm(s)
        chi = s.shape[0]
        state.schmidt_vectors[sites[0]] = s
        state.site_tensors[sites[1]] = vh.reshape(chi, 2, dim_right)
        bare_matrix = bare_gated.reshape(dim_left * 2, 2 * dim_right)
        new_left = bare_matrix @ vh.conj().T
        state.site_tensors[sites[0]] = new_left.reshape(dim_left, 2, chi)
    elif width == 3:
        matrix = full_gated.reshape(dim_left * 2, 4 * dim_right)
        u1, s1, v1 = svd_truncate(matrix, max_bond, cutoff)
        discarded = max(0.0, 1.0 - float(np.sum(s1**2)))
        s1 = s1 / np.linalg.norm(s1)
        chi1 = s1.shape[0]
        state.schmidt_vectors[sites[0]] = s1
        bare_matrix = bare_gated.reshape(dim_left * 2, 4 * dim_right)
        new_left = bare_matrix @ v1.conj().T
        state.site_tensors[sites[0]] = new_left.reshape(dim_left, 2, chi1)

        middle = (s1[:, None] * v1).reshape(chi1 * 2, 2 * dim_right)
        middle_norm = float(np.linalg.norm(middle))
        u2, s2, v2 = svd_truncate(middle, max_bond, cutoff)
        discarded += max(
            0.0, 1.0 - float(np.sum(s2**2)) / middle_norm**2
        )
        s2 = s2 / np.linalg.norm(s2)
        chi2 = s2.shape[0]
        state.schmidt_vectors[sites[1]] = s2
        state.site_tensors[sites[2]] = v2.reshape(chi2, 2, dim_right)
        inverse = _safe_inverse(s1)
        centre = (
            inverse[:, None] * u2.reshape(chi1, 2 * chi2)
        ).reshape(chi1, 2, chi2) * s2[None, None, :]
        state.site_tensors[sites[1]] = centre
    else:
        raise ValueError(f"unsupported gate width {width}")

    if discarded > TRUNCATION_WARN_WEIGHT:
        warnings.warn(
            f"truncation discarded squared weight {discarded:.3e} "
            f"(bond cap {max_bond})",
            stacklevel=2,
        )
    return discarded


def imaginary_step(
    state: MPSUnitCell,
    gate: np.ndarray,
    mode: str,
    max_bond: int = DEFAULT_BOND_DIM,
    cutoff: float = DEFAULT_CUTOFF,
) -> MPSUnitCell:
    """Apply one full sublattice sweep of a local gate.

    Sweeps the gate across every block offset of the unit cell in ascending
    order (even then odd bonds for two-site mode; the three offsets for
    three-site mode), restores canonical form, and returns the updated
    state; the input is not modified.

    Args:
        state: Unit cell to evolve.
        gate: Dense block gate, ``exp(-dtau * h_block)`` for imaginary time.
        mode: ``"2site"`` or ``"3site"``; must match the gate width and the
            cell size.
        max_bond: Bond-dimension cap for the truncations.
        cutoff: Relative singular-value cutoff.

    Raises:
        ValueError: On mode/gate/cell mismatch.
    """
    if mode not in ("2site", "3site"):
        raise ValueError(f"mode must be '2site' or '3site', got {mode!r}")
    width = 2 if mode == "2site" else 3
    if gate.shape != (2**width, 2**width):
        raise ValueError(
            f"{mode} expects a {2**width}x{2**width} gate, got {gate.shape}"
        )
    if width != state.cell_size:
        raise ValueError(
            f"{mode} sweep needs cell_size {width}, got {state.cell_size}"
        )
    out = state.copy()
    for start in range(out.cell_size):
        _apply_block(out, gate, start, max_bond, cutoff)
    return canonicalize(out, max_bond=max_bond, cutoff=cutoff)


def canonical_residual(state: MPSUnitCell) -> float:
    """Gauge-quality measure of the unit cell.

    Combines the right-orthonormality defect of each site tensor with the
    consistency defect of the Schmidt environments (propagating the squared
    Schmidt weights of one bond through a site must reproduce the next
    bond's squared weights).  Both are zero for an exactly canonical state.
    """
    worst = 0.0
    cell = state.cell_size
    for r in range(cell):
        tensor = state.site_tensors[r]
        dim_left = tensor.shape[0]
        gram = np.einsum("apb,cpb->ac", tensor, tensor.conj())
        right_defect = float(
            np.linalg.norm(gram - np.eye(dim_left)) / math.sqrt(dim_left)
        )
        env = np.diag(state.schmidt_vectors[(r - 1) % cell] ** 2).astype(
            complex
        )
        propagated = np.einsum(
            "ab,apc,bpd->cd", env, tensor.conj(), tensor
        )
        target = np.diag(state.schmidt_vectors[r] ** 2)
        left_defect = float(np.linalg.norm(propagated - target))
        worst = max(worst, right_defect, left_defect)
    return worst


def canonicalize(
    state: MPSUnitCell,
    tol: float = GAUGE_SWEEP_TOL,
    max_sweeps: int = GAUGE_SWEEP_LIMIT,
    max_bond: int = DEFAULT_BOND_DIM,
    cutoff: float = DEFAULT_CUTOFF,
) -> MPSUnitCell:
    """Restore canonical form by repeated identity-gate sweeps.

    Each sweep re-decomposes every bond with the current environments,
    which is the power method on the transfer operator; the state itself is
    unchanged up to truncation-level noise.  Stops once the canonical
    residual falls below ``tol`` or after ``max_sweeps`` sweeps.
    """
    out = state.copy()
    identity = np.eye(4, dtype=complex)
    for _ in range(max_sweeps):
        if canonical_residual(out) < tol:
            break
        for start in range(out.cell_size):
            _apply_block(out, identity, start, max_bond, cutoff)
    return out


def _transfer_environments(
    state: MPSUnitCell,
    warm: tuple[np.ndarray, np.ndarray] | None = None,
    tol: float = ENV_POWER_TOL,
    max_rounds: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Dominant left and right environments of the cell transfer operator.

    Power iteration with an optional warm start (the previous iteration's
    environments, when the bond dimensions still match).  Both environments
    are anchored on the bond that closes the cell, returned as Hermitian
    positive matrices indexed (ket, bra) and normalized to unit trace.  For
    a canonical state they are the squared Schmidt weights and the identity;
    for a drifted state they supply the correction that makes window
    contractions gauge independent.

    A warm start caps the rounds much lower than a cold start: near-critical
    states mix too slowly for the tolerance to be reachable every call, and
    the previous environments are already within the step-to-step change of
    the state, so a few rounds keep them tracking.
    """
    cell = state.cell_size
    dim = state.site_tensors[0].shape[0]
    if max_rounds is None:
        max_rounds = ENV_POWER_WARM_LIMIT if warm is not None else ENV_POWER_LIMIT

    def forward(env: np.ndarray) -> np.ndarray:
        for r in range(cell):
            tensor = state.site_tensors[r]
            env = np.einsum("ab,apc,bpd->cd", env, tensor, tensor.conj())
        return env

    def backward(env: np.ndarray) -> np.ndarray:
        for r in reversed(range(cell)):
            tensor = state.site_tensors[r]
            env = np.einsum("apc,bpd,cd->ab", tensor, tensor.conj(), env)
        return env

    def settle(env: np.ndarray, step) -> np.ndarray:
        env = env / float(np.trace(env).real)
        for _ in range(max_rounds):
            new = step(env)
            new = (new + new.conj().T) / 2.0
            new = new / float(np.trace(new).real)
            if float(np.linalg.norm(new - env)) < tol:
                return new
            env = new
        return env

    left0 = right0 = None
    if warm is not None and warm[0].shape[0] == dim and warm[1].shape[0] == dim:
        left0, right0 = warm
    if left0 is None:
        left0 = np.diag(state.schmidt_vectors[cell - 1].astype(complex) ** 2)
        right0 = np.eye(dim, dtype=complex)
    return settle(left0, forward), settle(right0, backward)


def _bare_window(state: MPSUnitCell, start: int, width: int) -> np.ndarray:
    """Window tensor over ``width`` sites without any Schmidt prefactor."""
    cell = state.cell_size
    block = state.site_tensors[start % cell]
    dim_left = block.shape[0]
    for j in range(1, width):
        block = np.tensordot(
            block,
            state.site_tensors[(start + j) % cell],
            axes=([block.ndim - 1], [0]),
        )
    return block.reshape(dim_left, 2**width, -1)


def _env_window_rdm(
    state: MPSUnitCell, width: int, envs: tuple[np.ndarray, np.ndarray]
) -> np.ndarray:
    """Window reduced density matrix contracted with transfer environments.

    Gauge independent: it depends only on the physical state the tensors
    represent, not on how well gauged they currently are.  ``width`` must be
    a multiple of the cell size so both window edges sit on the anchored
    bond.
    """
    left, right = envs
    theta = _bare_window(state, 0, width)
    half = np.einsum("aA,apb->Apb", left, theta)
    half = np.einsum("Apb,bB->ApB", half, right)
    rho = np.einsum("ApB,AqB->pq", half, theta.conj())
    rho = (rho + rho.conj().T) / 2.0
    return rho / float(np.trace(rho).real)


def _env_energy(
    state: MPSUnitCell,
    model: LocalModel,
    envs: tuple[np.ndarray, np.ndarray],
) -> float:
    """Energy per site contracted with transfer environments (gauge free)."""
    left, right = envs
    cell = state.cell_size
    lefts = {cell - 1: left}
    env = left
    for k in range(cell - 1):
        tensor = state.site_tensors[k]
        env = np.einsum("ab,apc,bpd->cd", env, tensor, tensor.conj())
        lefts[k] = env
    rights = {cell - 1: right}
    env = right
    for k in reversed(range(1, cell)):
        tensor = state.site_tensors[k]
        env = np.einsum("apc,bpd,cd->ab", tensor, tensor.conj(), env)
        rights[k - 1] = env
    block_op = model.block.astype(complex)
    total = 0.0
    for start in range(cell):
        theta = _bare_window(state, start, cell)
        lenv = lefts[(start - 1) % cell]
        renv = rights[(start - 1) % cell]
        half = np.einsum("aA,apb->Apb", lenv, theta)
        half = np.einsum("Apb,bB->ApB", half, renv)
        overlap = np.einsum("ApB,AqB->pq", half, theta.conj())
        numerator = float(np.einsum("pq,qp->", overlap, block_op).real)
        denominator = float(np.trace(overlap).real)
        total += numerator / denominator
    return total / cell


def settled_iteration(records: list["IterationRecord"], tol: float) -> int:
    """Iteration after which the logged energy stays within ``tol`` of its end.

    Scans a convergence log for the last entry whose energy differs from the
    final logged energy by more than ``tol`` and returns the iteration number
    of the next entry.  Returns the first logged iteration when every entry
    is already settled; a log whose energy is still moving at the end returns
    the final iteration number (the run settles no earlier than its last
    entry).

    Raises:
        ValueError: If the log is empty or ``tol`` is not positive.
    """
    if not records:
        raise ValueError("records must be non-empty")
    if tol <= 0:
        raise ValueError(f"tol must be positive: {tol}")
    final = records[-1].energy
    last_bad = None
    for index, record in enumerate(records):
        if abs(record.energy - final) > tol:
            last_bad = index
    if last_bad is None:
        return records[0].iteration
    return records[last_bad + 1].iteration


def _block_expectation(
    state: MPSUnitCell, block: np.ndarray, start: int
) -> float:
    width = round(math.log2(block.shape[0]))
    window = _theta(state, start, width)
    numerator = np.einsum(
        "apb,pq,aqb->", window.conj(), block.astype(complex), window
    )
    denominator = np.einsum("apb,apb->", window.conj(), window)
    return float((numerator / denominator).real)


def energy_density(state: MPSUnitCell, model: LocalModel) -> float:
    """Energy per site of the represented state under the model.

    Re-canonicalizes first when the gauge residual is too large for the
    environment-based contraction to be trustworthy.
    """
    if canonical_residual(state) > CANONICAL_RESIDUAL_TOL:
        state = canonicalize(state)
    total = sum(
        _block_expectation(state, model.block, start)
        for start in range(state.cell_size)
    )
    return total / state.cell_size


def _window_rdm(state: MPSUnitCell, width: int) -> np.ndarray:
    window = _theta(state, 0, width)
    rho = np.einsum("apb,aqb->pq", window, window.conj())
    return rho / np.trace(rho).real


def _mixed_transfer_eigenvalue(
    first: MPSUnitCell, second: MPSUnitCell
) -> complex:
    """Dominant eigenvalue of the cell overlap transfer operator.

    For canonical states the self-overlap eigenvalue is one, so the mixed
    magnitude measures per-cell state overlap: magnitude one (up to gauge)
    means the two trajectories represent the same state, anything strictly
    below one means their infinite-volume overlap vanishes.
    """
    cell = first.cell_size
    dim1 = first.site_tensors[0].shape[0]
    dim2 = second.site_tensors[0].shape[0]

    def apply(vec: np.ndarray) -> np.ndarray:
        env = vec.reshape(dim1, dim2)
        for r in range(cell):
            env = np.einsum(
                "ab,apc,bpd->cd",
                env,
                first.site_tensors[r].conj(),
                second.site_tensors[r],
            )
        return env.reshape(-1)

    size = dim1 * dim2
    if size <= 16:
        dense = np.zeros((size, size), dtype=complex)
        basis = np.eye(size, dtype=complex)
        for i in range(size):
            dense[:, i] = apply(basis[:, i])
        values = np.linalg.eigvals(dense)
        return complex(values[np.argmax(np.abs(values))])
    operator = scipy.sparse.linalg.LinearOperator(
        (size, size), matvec=apply, dtype=complex
    )
    values = scipy.sparse.linalg.eigs(
        operator, k=1, which="LM", return_eigenvectors=False, maxiter=5000
    )
    return complex(values[0])


@dataclass(frozen=True)
class IterationRecord:
    """One convergence-log row of an imaginary-time run."""

    dtau: float
    iteration: int
    distance: float
    energy: float
    bond_dim: int
    discarded_weight: float


@dataclass
class ScheduleResult:
    """Outcome of an imaginary-time schedule run.

    Attributes:
        states: Final trajectory states (one unless an averaged mode).
        weights: Trajectory weights.
        energy: Combined ground-state energy per site.
        iteration_count: Total iterations over the whole schedule.
        converged: Whether every step size reached the distance threshold.
        last_distance: Final per-iteration distance observed.
        records: Full convergence log.
    """

    states: list[MPSUnitCell]
    weights: list[float]
    energy: float
    iteration_count: int
    converged: bool
    last_distance: float
    records: list[IterationRecord] = field(default_factory=list)


def _combined_energy(
    states: list[MPSUnitCell],
    weights: list[float],
    model: LocalModel,
    combine: str,
) -> float:
    energies = [energy_density(s, model) for s in states]
    if len(states) == 1 or combine == "trajectories":
        return float(sum(w * e for w, e in zip(weights, energies)))
    overlap = abs(_mixed_transfer_eigenvalue(states[0], states[1]))
    if overlap >= 1.0 - SAME_STATE_OVERLAP_TOL:
        # Equal states: the combined vector is the common state itself.
        return float(sum(w * e for w, e in zip(weights, energies)))
    # Distinct infinite states have vanishing mutual overlap, so the cross
    # terms of the combined vector's Rayleigh quotient drop out and the
    # squared weights renormalize.
    squares = [w**2 for w in weights]
    total = sum(squares)
    return float(sum(w * e for w, e in zip(squares, energies)) / total)


def run_schedule(
    state: MPSUnitCell,
    model: LocalModel,
    schedule: ConvergenceSchedule,
    formula_mode: str,
    combine: str = "trajectories",
    max_bond: int = DEFAULT_BOND_DIM,
    cutoff: float = DEFAULT_CUTOFF,
) -> ScheduleResult:
    """Run the imaginary-time schedule and count iterations to convergence.

    One iteration applies every stage of the chosen product-formula circuit
    (each stage is one sublattice sweep with the stage's fractional step)
    to each trajectory.  Averaged modes evolve two trajectories with the
    forward and reversed group orderings at equal weight; convergence is
    measured on the mixture's two-cell window density matrix, single modes
    on their own.  The window matrix and the logged energy are contracted
    with the dominant transfer environments of each trajectory, so the log
    tracks the physical state even while the evolving tensors drift away
    from canonical form between re-gauges.  After convergence at each step
    size the trajectories are re-gauged before continuing.

    Args:
        state: Initial unit cell (copied; trajectories never alias it).
        model: Local chain model to minimize.
        schedule: Step sizes, threshold, and per-step-size iteration cap.
        formula_mode: One of ``k1, k2, k4, averaged_k1, averaged_k2``.
        combine: ``"trajectories"`` for a mixture of trajectory states or
            ``"lcu"`` for the linear combination of the evolved vectors
            (evaluated through mixed transfer overlaps).
        max_bond: Bond-dimension cap.
        cutoff: Relative singular-value cutoff.

    Returns:
        The schedule outcome; ``converged`` is False if any step size hit
        the iteration cap, in which case the remaining step sizes are
        skipped and the log ends with the last distance reached.
    """
    if formula_mode not in FORMULA_MODES:
        raise ValueError(
            f"formula_mode must be one of {FORMULA_MODES}, got {formula_mode!r}"
        )
    if combine not in COMBINE_MODES:
        raise ValueError(
            f"combine must be one of {COMBINE_MODES}, got {combine!r}"
        )
    if state.cell_size != model.cell_size:
        raise ValueError(
            f"state cell_size {state.cell_size} does not match model "
            f"cell_size {model.cell_size}"
        )
    order = int(formula_mode.rsplit("k", 1)[1])
    averaged = formula_mode.startswith("averaged")
    num_groups = model.num_groups
    forward = tuple(range(num_groups))
    orderings = [forward, forward[::-1]] if averaged else [forward]
    weights = [1.0 / len(orderings)] * len(orderings)
    circuits = [make_formula(order, o) for o in orderings]
    # Stage lists are written leftmost factor first; acting on a state means
    # applying the rightmost factor first.
    stage_lists = [tuple(reversed(c.stages)) for c in circuits]
    states = [state.copy() for _ in orderings]
    window = 2 * model.cell_size
    environments: list[tuple[np.ndarray, np.ndarray] | None]
    environments = [None] * len(states)

    def measure() -> tuple[np.ndarray, float]:
        for idx, traj in enumerate(states):
            environments[idx] = _transfer_environments(
                traj, warm=environments[idx]
            )
        mixture = np.zeros((2**window, 2**window), dtype=complex)
        energy_sum = 0.0
        for weight, traj, envs in zip(weights, states, environments):
            mixture += weight * _env_window_rdm(traj, window, envs)
            energy_sum += weight * _env_energy(traj, model, envs)
        return mixture, energy_sum

    records: list[IterationRecord] = []
    total_iterations = 0
    last_distance = math.inf
    converged_all = True

    for dtau in schedule.dtau_list:
        gate_cache: dict[float, np.ndarray] = {}
        for _, fraction in stage_lists[0]:
            duration = fraction * dtau
            if duration not in gate_cache:
                gate_cache[duration] = scipy.linalg.expm(
                    -duration * model.block.astype(complex)
                )
        previous, _ = measure()
        converged_here = False
        for _ in range(schedule.max_iterations):
            discarded = 0.0
            for traj, stages in zip(states, stage_lists):
                for group, fraction in stages:
                    gate = gate_cache[fraction * dtau]
                    start = model.block_starts[group]
                    discarded = max(
                        discarded,
                        _apply_block(traj, gate, start, max_bond, cutoff),
                    )
            total_iterations += 1
            current, energy = measure()
            last_distance = float(np.linalg.norm(current - previous))
            previous = current
            records.append(
                IterationRecord(
                    dtau=dtau,
                    iteration=total_iterations,
                    distance=last_distance,
                    energy=energy,
                    bond_dim=max(s.max_bond_dim for s in states),
                    discarded_weight=discarded,
                )
            )
            if last_distance < schedule.threshold:
                converged_here = True
                break
        states = [canonicalize(s, max_bond=max_bond, cutoff=cutoff) for s in states]
        # Re-gauging rotates the bond bases, so cached environments no
        # longer apply to the new tensors.
        environments = [None] * len(states)
        if not converged_here:
            converged_all = False
            break

    energy = _combined_energy(states, weights, model, combine)
    return ScheduleResult(
        states=states,
        weights=weights,
        energy=energy,
        iteration_count=total_iterations,
        converged=converged_all,
        last_distance=last_distance,
        records=records,
    )


@dataclass(frozen=True)
class EDReference:
    """Finite-size exact-diagonalization oracle with extrapolation.

    Attributes:
        energy_per_site: Extrapolated thermodynamic ground energy per site
            from a least-squares fit of ``e(L) = e_inf + c / L**2``.
        finite_energies: Ground energy per site for each ring size used.
    """

    energy_per_site: float
    finite_energies: dict[int, float]


def _heisenberg_ring_terms(length: int) -> list[PauliTerm]:
    terms = []
    for i in range(length):
        j = (i + 1) % length
        for letter in "XYZ":
            letters = ["I"] * length
            letters[i] = letter
            letters[j] = letter
            terms.append(PauliTerm("".join(letters), 1.0))
    return terms


def _terms_to_sparse(terms, length: int) -> scipy.sparse.csr_matrix:
    matrices = {
        key: scipy.sparse.csr_matrix(value)
        for key, value in PAULI_MATRICES.items()
    }
    total = scipy.sparse.csr_matrix((2**length, 2**length), dtype=complex)
    for term in terms:
        op = matrices[term.string[0]]
        for letter in term.string[1:]:
            op = scipy.sparse.kron(op, matrices[letter], format="csr")
        total = total + term.coefficient * op
    return total


def ed_reference_energy(
    model_name: str, sizes: tuple[int, ...] | None = None, **params
) -> EDReference:
    """Exact-diagonalization oracle for the supported chain models.

    Diagonalizes periodic rings of increasing size sparsely and
    extrapolates the ground energy per site with a ``1/L**2`` finite-size
    correction.

    Args:
        model_name: One of the iTEBD chain models.
        sizes: Ring lengths; defaults to (12, 14, 16) for the two-site
            model and (9, 12, 15) for three-site models.
        **params: Model parameters forwarded to the builder.
    """
    if model_name == "heisenberg_nn":
        sizes = sizes or (12, 14, 16)
        term_lists = {
            length: _heisenberg_ring_terms(length) for length in sizes
        }
    elif model_name in ("cluster_spt", "zxz_field"):
        sizes = sizes or (9, 12, 15)
        term_lists = {
            length: list(build_model(model_name, n=length, **params).all_terms())
            for length in sizes
        }
    else:
        raise ValueError(
            f"unknown model {model_name!r}; expected one of {ITEBD_MODELS}"
        )
    finite = {}
    for length, terms in term_lists.items():
        matrix = _terms_to_sparse(terms, length)
        value = scipy.sparse.linalg.eigsh(
            matrix, k=1, which="SA", return_eigenvectors=False
        )[0]
        finite[length] = float(value) / length
    lengths = np.array(sorted(finite))
    energies = np.array([finite[length] for length in lengths])
    design = np.stack([np.ones_like(lengths, dtype=float), 1.0 / lengths**2])
    coeffs, *_ = np.linalg.lstsq(design.T, energies, rcond=None)
    return EDReference(
        energy_per_site=float(coeffs[0]),
        finite_energies=finite,
    )
