"""Config-driven experiment runner emitting deterministic CSV files.

Each experiment is identified by a short id, validated against a strict
schema (unknown fields are rejected by name), and produces one or more CSV
files whose bytes are a pure function of the resolved configuration. Every
file starts with a provenance header (artifact version, experiment id, seed,
canonical config echo) followed by a column header row; floats are written
with 17 significant digits and a ``.`` decimal separator.

Experiment ids:

``loss_vs_p``
    Haar loss of a two-formula mixture versus the weight p.
``deviation_vs_samples``
    Relative batch-to-batch spread of the Monte-Carlo loss versus samples.
``longtime_alpha_scan``
    Long-time single-versus-mixture loss ratio across interaction exponents.
``loss_vs_steps``
    Loss growth with step count for a single formula and the full mixture.
``symmetry_p_scan``
    Loss of the Hadamard-conjugated pair versus the weight p.
``symmetry_steps``
    Fixed p = 1/2 Hadamard pair versus step count, per exponent.
``symmetry_size_scan``
    Random global-rotation averaging (M elements) across system sizes.
``symmetry_M_scan``
    Residual suppression versus set size M, or the Haar-set asymptote
    against the all-orderings mixture.
``itebd_convergence``
    Imaginary-time convergence log (dtau, iteration, distance, energy, ...).
``bernstein_trials``
    Sampled-compilation fluctuation norms against the concentration bound.
``shots_tvd``
    Total variation distance of exact and shot-sampled bitstring
    distributions for single-order formulas and their equal average.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .channels import (
    LossTables,
    MixedChannel,
    leading_error_coefficient,
    loss_monte_carlo,
)
from .formulas import (
    GroupEvolver,
    all_orderings,
    compile_unitary,
    make_formula,
    repeat_steps,
)
from .hamiltonians import HamiltonianSpec, build_model, group_dense
from .itebd import (
    COMBINE_MODES,
    FORMULA_MODES,
    ITEBD_MODELS,
    ConvergenceSchedule,
    init_stabilizer_cell,
    init_unit_cell,
    local_model,
    run_schedule,
    settled_iteration,
)
from .linalg import evolve_unitary, hermitian_eigendecompose, make_rng
from .sampling import compute_gamma, fluctuation_norm
from .symmetry import (
    conjugated_formulas,
    hadamard_generator,
    make_symmetry_set,
    suppression_scan,
)

logger = logging.getLogger(__name__)

ARTIFACT_VERSION = __version__

DENSE_QUBIT_CAP = 12
SIZE_SCAN_QUBIT_CAP = 8

SHOT_CHANNELS = ("first_order_ab", "first_order_ba", "averaged")


class ConfigError(ValueError):
    """A configuration problem, carrying the offending field name."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"field {field_name!r}: {message}")


class NumericalError(RuntimeError):
    """A non-finite or otherwise unusable numerical result."""


# ---------------------------------------------------------------------------
# Field schema helpers
# ---------------------------------------------------------------------------

_REQUIRED = object()


@dataclass(frozen=True)
class FieldSpec:
    """Declared config field: kind, default, and optional constraints."""

    kind: str  # int | float | str | bool | int_list | float_list
    default: object = _REQUIRED
    choices: tuple = ()
    positive: bool = False
    min_value: float | None = None
    max_value: float | None = None

    def coerce(self, name: str, value):
        if self.kind == "int":
            return self._num(name, value, want_int=True)
        if self.kind == "float":
            return self._num(name, value, want_int=False)
        if self.kind == "bool":
            if not isinstance(value, bool):
                raise ConfigError(name, "must be a boolean")
            return value
        if self.kind == "str":
            if not isinstance(value, str):
                raise ConfigError(name, "must be a string")
            if self.choices and value not in self.choices:
                raise ConfigError(
                    name, f"must be one of {', '.join(self.choices)}"
                )
            return value
        if self.kind in ("int_list", "float_list"):
            if not isinstance(value, (list, tuple)) or not value:
                raise ConfigError(name, "must be a non-empty list of numbers")
            want_int = self.kind == "int_list"
            return tuple(
                self._num(f"{name}[{i}]", item, want_int=want_int)
                for i, item in enumerate(value)
            )
        raise AssertionError(f"unknown field kind {self.kind}")

    def _num(self, name: str, value, want_int: bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, "must be a number")
        if want_int:
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(name, "must be an integer")
            value = int(value)
        else:
            value = float(value)
        if self.positive and value <= 0:
            raise ConfigError(name, "must be positive")
        if self.min_value is not None and value < self.min_value:
            raise ConfigError(name, f"must be >= {self.min_value}")
        if self.max_value is not None and value > self.max_value:
            raise ConfigError(name, f"must be <= {self.max_value}")
        return value


COMMON_SCHEMA: dict[str, FieldSpec] = {
    "seed": FieldSpec("int", min_value=0),
    "out": FieldSpec("str", default=""),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully resolved experiment configuration (defaults applied)."""

    experiment: str
    seed: int
    out: str
    params: dict

    def echo(self) -> str:
        payload = {"experiment": self.experiment, "seed": self.seed, **self.params}
        if self.out:
            payload["out"] = self.out
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @property
    def basename(self) -> str:
        return self.out or self.experiment


def validate_config(raw: dict) -> ExperimentConfig:
    """Check a raw mapping against the experiment schema and apply defaults.

    Raises:
        ConfigError: Naming the first invalid, missing, or unknown field.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config", "must be a JSON object")
    experiment = raw.get("experiment")
    if experiment is None:
        raise ConfigError("experiment", "is required")
    if not isinstance(experiment, str) or experiment not in EXPERIMENTS:
        known = ", ".join(sorted(EXPERIMENTS))
        raise ConfigError("experiment", f"must be one of: {known}")
    definition = EXPERIMENTS[experiment]
    schema = {**COMMON_SCHEMA, **definition.schema}
    for key in raw:
        if key != "experiment" and key not in schema:
            raise ConfigError(
                key, f"unknown field for experiment {experiment!r}"
            )
    resolved = {}
    for name, spec in schema.items():
        if name in raw:
            resolved[name] = spec.coerce(name, raw[name])
        elif spec.default is _REQUIRED:
            raise ConfigError(name, "is required")
        else:
            resolved[name] = spec.default
    seed = resolved.pop("seed")
    out = resolved.pop("out")
    config = ExperimentConfig(
        experiment=experiment, seed=seed, out=out, params=resolved
    )
    definition.check(config)
    return config


def load_config_file(path: str | Path) -> dict:
    """Read a JSON config file into a raw mapping."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a JSON object")
    return data


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def format_cell(value) -> str:
    """Render one CSV cell; floats use 17 significant digits."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        val = float(value)
        if not math.isfinite(val):
            raise NumericalError(f"non-finite value {val!r} in CSV output")
        return format(val, ".17g")
    return str(value)


def write_csv(
    path: Path,
    config: ExperimentConfig,
    columns: tuple[str, ...],
    rows,
    extra_header: tuple[tuple[str, str], ...] = (),
) -> Path:
    """Write one CSV file with the provenance header; returns the path."""
    lines = [
        f"# artifact_version={ARTIFACT_VERSION}",
        f"# experiment={config.experiment}",
        f"# seed={config.seed}",
        f"# config={config.echo()}",
    ]
    lines.extend(f"# {key}={value}" for key, value in extra_header)
    lines.append(",".join(columns))
    for row in rows:
        if len(row) != len(columns):
            raise AssertionError("row width does not match the column header")
        lines.append(",".join(format_cell(cell) for cell in row))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="")
    return path


# ---------------------------------------------------------------------------
# Shared dense-model helpers
# ---------------------------------------------------------------------------


def _target_unitary(spec: HamiltonianSpec, t: float) -> np.ndarray:
    return evolve_unitary(hermitian_eigendecompose(sum(group_dense(spec))), t)


def _ordered_pair(spec: HamiltonianSpec, order: int, t: float):
    """Single-step formulas for the forward and reversed group orderings."""
    evolver = GroupEvolver.from_spec(spec)
    forward = tuple(range(spec.num_groups))
    u_fwd = compile_unitary(make_formula(order, forward), evolver, t)
    u_rev = compile_unitary(make_formula(order, tuple(reversed(forward))), evolver, t)
    return u_fwd, u_rev


def _ordering_step_unitaries(spec: HamiltonianSpec, order: int, dt: float):
    evolver = GroupEvolver.from_spec(spec)
    orderings = all_orderings(spec.num_groups)
    return [
        compile_unitary(make_formula(order, o), evolver, dt) for o in orderings
    ]


def _check_loss(value: float, context: str) -> float:
    if not math.isfinite(value):
        raise NumericalError(f"non-finite loss in {context}")
    return float(value)


# ---------------------------------------------------------------------------
# Experiment implementations
# ---------------------------------------------------------------------------


def _run_loss_vs_p(config: ExperimentConfig, out_dir: Path) -> list[Path]:
    c = config.params
    spec = build_model("xy_chain", n=c["n"], h=c["h"])
    u_fwd, u_rev = _ordered_pair(spec, c["order"], c["t"])
    target = _target_unitary(spec, c["t"])
    p_grid = np.linspace(0.0, 1.0, c["p_points"])
    rows = []
    if c["loss"] == "analytic":
        tables = LossTables([u_fwd, u_rev], target)
        losses = [tables.loss([p, 1.0 - p]) for p in p_grid]
        stderrs = [0.0] * len(losses)
    else:
        losses, stderrs = [], []
        for i, p in enumerate(p_grid):
            channel = MixedChannel((u_fwd, u_rev), (float(p), float(1.0 - p)))
            report = loss_monte_carlo(
                channel, target, c["samples"], config.seed + i
            )
            losses.append(report.value)
            stderrs.append(report.stderr)
    single = _check_loss(losses[-1], "loss_vs_p single formula")
    for p, loss, stderr in zip(p_grid, losses, stderrs):
        loss = _check_loss(loss, "loss_vs_p")
        ratio = loss / single if single > 0 else math.inf
        rows.append((float(p), loss, stderr, _check_loss(ratio, "loss_vs_p ratio")))
    path = write_csv(
        out_dir / f"{config.basename}.csv",
        config,
        ("p", "loss", "stderr", "ratio_vs_single"),
        rows,
    )
    return [path]


def _run_deviation_vs_samples(
    config: ExperimentConfig, out_dir: Path
) -> list[Path]:
    c = config.params
    spec = build_model("xy_chain", n=c["n"], h=c["h"])
    rows = []
    run_index = 0
    for order in c["orders"]:
        u_fwd, u_rev = _ordered_pair(spec, order, c["t"])
        target = _target_unitary(spec, c["t"])
        tables = LossTables([u_fwd, u_rev], target)
        for p in c["p_values"]:
            weights = (float(p), float(1.0 - p))
            analytic = tables.loss(weights)
            channel = MixedChannel((u_fwd, u_rev), weights)
            for samples in c["samples_list"]:
                batch_values = []
                for _ in range(c["batches"]):
                    report = loss_monte_carlo(
                        channel, target, samples, config.seed + run_index
                    )
                    batch_values.append(report.value)
                    run_index += 1
                mean = float(np.mean(batch_values))
                rms = float(np.std(batch_values, ddof=1))
                if mean <= 0:
                    raise NumericalError(
                        "deviation_vs_samples: batch mean loss is not positive"
                    )
                rows.append(
                    (order, float(p), samples, analytic, mean, rms, rms / mean)
                )
    path = write_csv(
        out_dir / f"{config.basename}.csv",
        config,
        (
            "order",
            "p",
            "samples",
            "analytic_loss",
            "mean_loss",
            "rms_deviation",
            "relative_deviation",
        ),
        rows,
    )
    return [path]


def _mixture_vs_single_losses(
    spec: HamiltonianSpec, order: int, dt: float, n_steps: int
) -> tuple[float, float]:
    """Loss of the first ordering and of the equal all-orderings mixture."""
    steps = _ordering_step_unitaries(spec, order, dt)
    full = [repeat_steps(u, n_steps) for u in steps]
    target = _target_unitary(spec, dt * n_steps)
    tables = LossTables(full, target)
    size = len(full)
    single = np.zeros(size)
    single[0] = 1.0
    loss_single = tables.loss(single)
    loss_mixture = tables.loss(np.full(size, 1.0 / size))
    return loss_single, loss_mixture


def _run_longtime_alpha_scan(
    config: ExperimentConfig, out_dir: Path
) -> list[Path]:
    c = config.params
    dt = c["t"] / c["n_steps"]
    rows = []
    for alpha in c["alphas"]:
        spec = build_model("powerlaw_heisenberg", n=c["n"], alpha=alpha)
        loss_single, loss_mixture = _mixture_vs_single_losses(
            spec, c["order"], dt, c["n_steps"]
        )
        loss_single = _check_loss(loss_single, "longtime_alpha_scan single")
        loss_mixture = _check_loss(loss_mixture, "longtime_alpha_scan mixture")
        ratio = loss_mixture / loss_single if loss_single > 0 else math.inf
        rows.append(
            (
                float(alpha),
                c["n"],
                c["t"],
                c["n_steps"],
                c["order"],
                loss_single,
                loss_mixture,
                _check_loss(ratio, "longtime_alpha_scan ratio"),
            )
        )
    path = write_csv(
        out_dir / f"{config.basename}.csv",
        config,
        (
            "alpha",
            "n",
            "t",
            "n_steps",
            "order",
            "loss_single",
            "loss_mixture",
            "ratio",
        ),
        rows,
    )
    return [path]


def _run_loss_vs_steps(config: ExperimentConfig, out_dir: Path) -> list[Path]:
    c = config.params
    spec = build_model("powerlaw_heisenberg", n=c["n"], alpha=c["alpha"])
    steps = _ordering_step_unitaries(spec, c["order"], c["dt"])
    h_eig = hermitian_eigendecompose(sum(group_dense(spec)))
    rows = []
    for n_steps in c["steps_list"]:
        full = [repeat_steps(u, n_steps) for u in steps]
        target = evolve_unitary(h_eig, c["dt"] * n_steps)
        tables = LossTables(full, target)
        size = len(full)
        single = np.zeros(size)
        single[0] = 1.0
        loss_single = _check_loss(tables.loss(single), "loss_vs_steps single")
        loss_mixture = _check_loss(
            tables.loss(np.full(size, 1.0 / size)), "loss_vs_steps mixture"
        )
        ratio = loss_mixture / loss_single if loss_single > 0 else math.inf
        rows.append(
            (
                n_steps,
                c["dt"] * n_steps,
                loss_single,
                loss_mixture,
                _check_loss(ratio, "loss_vs_steps ratio"),
            )
        )
    path = write_csv(
        out_dir / f"{config.basename}.csv",
        config,
        ("n_steps", "t_total", "loss_single", "loss_mixture", "ratio"),
        rows,
    )
    return [path]


def _hadamard_pair_tables(
    spec: HamiltonianSpec, order: int, dt: float, n_steps: int
) -> LossTables:
    """Loss tables for {U, C U C} where C is the global Hadamard."""
    evolver = GroupEvolver.from_spec(spec)
    forward = tuple(range(spec.num_groups))
    u_step = compile_unitary(make_formula(order, forward), evolver, dt)
    u_full = repeat_steps(u_step, n_steps)
    hamiltonian = sum(group_dense(spec))
    sym = make_symmetry_set("hadamard_global", spec.n, 2, hamiltonian)
    unitaries = conjugated_formulas(u_full, sym)
    target = evolve_unitary(hermitian_eigendecompose(hamiltonian), dt * n_steps)
    return LossTables(unitaries, target)


def _run_symmetry_p_scan(config: ExperimentConfig, out_dir: Path) -> list[Path]:
    c = config.params
    spec = build_model("powerlaw_heisenberg", n=c["n"], alpha=c["alpha"])
    tables = _hadamard_pair_tables(spec, c["order"], c["dt"], c["n_steps"])
    loss_single = _check_loss(tables.loss([1.0, 0.0]), "symmetry_p_scan single")
    rows = []
    for p in np.linspace(0.0, 1.0, c["p_points"]):
        loss = _check_loss(tables.loss([p, 1.0 - p]), "symmetry_p_scan")
        ratio = loss / loss_single if loss_single > 0 else math.inf
        rows.append((float(p), loss, _check_loss(ratio, "symmetry_p_scan ratio")))
    path = write_csv(
        out_dir / f"{config.basename}.csv",
        config,
        ("p", "loss", "ratio_vs_single"),
        rows,
    )
    return [path]


def _run_symmetry_steps(config: ExperimentConfig, out_dir: Path) -> list[Path]:
    c = config.params
    rows = []
    for alpha in c["alphas"]:
        spec = build_model("powerlaw_heisenberg", n=c["n"], alpha=alpha)
        evolver = GroupEvolver.from_spec(spec)
        forward = tuple(range(spec.num_groups))
        u_step = compile_unitary(make_formula(c["order"], forward), evolver, c["dt"])
        hamiltonian = sum(group_dense(spec))
        h_eig = hermitian_eigendecompose(hamiltonian)
        sym = make_symmetry_set("hadamard_global", spec.n, 2, hamiltonian)
        for n_steps in c["steps_list"]:
            u_full = repeat_steps(u_step, n_steps)
            unitaries = conjugated_formulas(u_full, sym)
            target = evolve_unitary(h_eig, c["dt"] * n_steps)
            tables = LossTables(unitaries, target)
            loss_single = _check_loss(
                tables.loss([1.0, 0.0]), "symmetry_steps single"
            )
            loss_pair = _check_loss(
                tables.loss([0.5, 0.5]), "symmetry_steps pair"
            )
            ratio = loss_pair / loss_single if loss_single > 0 else math.inf
            ratio = _check_loss(ratio, "symmetry_steps ratio")
            rows.append(
                (
                    float(alpha),
                    n_steps,
                    c["dt"] * n_steps,
                    loss_single,
                    loss_pair,
                    ratio,
                    1.0 - ratio,
                )
            )
    path = write_csv(
        out_dir / f"{config.basename}.csv",
        config,
        (
            "alpha",
            "n_steps",
            "t_total",
            "loss_single",
            "loss_pair",
            "ratio",
            "reduction",
        ),
        rows,
    )
    return [path]


def _run_symmetry_size_scan(
    config: ExperimentConfig, out_dir: Path
) -> list[Path]:
    c = config.params
    dt = c["t"] / c["n_steps"]
    rows = []
    for n in c["sizes"]:
        for alpha in c["alphas"]:
            spec = build_model("powerlaw_heisenberg", n=n, alpha=alpha)
            evolver = GroupEvolver.from_spec(spec)
            forward = tuple(range(spec.num_groups))
            u_step = compile_unitary(make_formula(c["order"], forward), evolver, dt)
            u_full = repeat_steps(u_step, c["n_steps"])
            hamiltonian = sum(group_dense(spec))
            sym = make_symmetry_set(
                "haar_global", n, c["m"], hamiltonian, seed=config.seed
            )
            unitaries = conjugated_formulas(u_full, sym)
            target = evolve_unitary(
                hermitian_eigendecompose(hamiltonian), c["t"]
            )
            tables = LossTables(unitaries, target)
            size = len(unitaries)
            single = np.zeros(size)
            single[0] = 1.0
            loss_single = _check_loss(
                tables.loss(single), "symmetry_size_scan single"
            )
            loss_sym = _check_loss(
                tables.loss(np.full(size, 1.0 / size)),
                "symmetry_size_scan mixture",
            )
            ratio = loss_sym / loss_single if loss_single > 0 else math.inf
            ratio = _check_loss(ratio, "symmetry_size_scan ratio")
            rows.append(
                (n, float(alpha), loss_single, loss_sym, ratio, 1.0 - ratio)
            )
    path = write_csv(
        out_dir / f"{config.basename}.csv",
        config,
        ("n", "alpha", "loss_single", "loss_symmetrized", "ratio", "reduction"),
        rows,
    )
    return [path]


def _run_symmetry_m_scan(config: ExperimentConfig, out_dir: Path) -> list[Path]:
    c = config.params
    spec = build_model("powerlaw_heisenberg", n=c["n"], alpha=c["alpha"])
    if c["mode"] == "generator_residuals":
        forward = tuple(range(spec.num_groups))
        circuit = make_formula(c["order"], forward)
        error_op = leading_error_coefficient(
            circuit, spec, c["order"] + 1, t0=c["t0"]
        )
        generator = hadamard_generator(c["n"])
        points = suppression_scan(error_op, generator, c["delta"], c["m_list"])
        rows = [
            (point.m, point.noncommuting, point.commuting) for point in points
        ]
        path = write_csv(
            out_dir / f"{config.basename}.csv",
            config,
            ("m", "noncommuting_norm", "commuting_norm"),
            rows,
        )
        return [path]
    # haar_orderings: Haar-set averaging against the all-orderings mixture.
    hamiltonian = sum(group_dense(spec))
    target = _target_unitary(spec, c["t"])
    evolver = GroupEvolver.from_spec(spec)
    forward = tuple(range(spec.num_groups))
    u_single = compile_unitary(make_formula(c["order"], forward), evolver, c["t"])
    loss_single = _check_loss(
        LossTables([u_single], target).loss([1.0]), "symmetry_M_scan single"
    )
    orderings = _ordering_step_unitaries(spec, c["order"], c["t"])
    tables_ord = LossTables(orderings, target)
    loss_orderings = _check_loss(
        tables_ord.loss(np.full(len(orderings), 1.0 / len(orderings))),
        "symmetry_M_scan orderings",
    )
    rows = []
    for m in c["m_list"]:
        sym = make_symmetry_set(
            "haar_global", c["n"], m, hamiltonian, seed=config.seed
        )
        unitaries = conjugated_formulas(u_single, sym)
        tables = LossTables(unitaries, target)
        loss_haar = _check_loss(
            tables.loss(np.full(m, 1.0 / m)), "symmetry_M_scan haar"
        )
        if loss_single <= 0:
            raise NumericalError("symmetry_M_scan: single-formula loss is zero")
        rows.append(
            (
                m,
                loss_single,
                loss_haar,
                loss_orderings,
                loss_haar / loss_single,
                loss_orderings / loss_single,
            )
        )
    path = write_csv(
        out_dir / f"{config.basename}.csv",
        config,
        (
            "m",
            "loss_single",
            "loss_haar_mixture",
            "loss_ordering_mixture",
            "haar_ratio",
            "ordering_ratio",
        ),
        rows,
    )
    return [path]


def _run_itebd_convergence(
    config: ExperimentConfig, out_dir: Path
) -> list[Path]:
    c = config.params
    model = local_model(c["model"], J=c["j"], V=c["v"], h=c["h"]) if c[
        "model"
    ] == "cluster_spt" else local_model(c["model"])
    schedule = ConvergenceSchedule(
        dtau_list=tuple(c["dtau_list"]),
        threshold=c["threshold"],
        max_iterations=c["max_iterations"],
    )
    if c["init"] == "stabilizer":
        state = init_stabilizer_cell(c["bond_dim"], config.seed)
    else:
        state = init_unit_cell(model.cell_size, c["bond_dim"], config.seed)
    result = run_schedule(
        state,
        model,
        schedule,
        c["formula_mode"],
        combine=c["combine"],
        max_bond=c["bond_dim"],
        cutoff=c["cutoff"],
    )
    if not math.isfinite(result.energy):
        raise NumericalError("itebd_convergence: non-finite energy")
    rows = [
        (
            record.dtau,
            record.iteration,
            record.distance,
            record.energy,
            record.bond_dim,
            record.discarded_weight,
        )
        for record in result.records
    ]
    settled = settled_iteration(result.records, c["settle_tol"])
    extra = (
        ("converged", "true" if result.converged else "false"),
        ("total_iterations", str(result.iteration_count)),
        ("energy_settled_iteration", str(settled)),
        ("final_energy", format_cell(result.energy)),
        ("final_distance", format_cell(result.last_distance)),
    )
    path = write_csv(
        out_dir / f"{config.basename}.csv",
        config,
        ("dtau", "iteration", "distance", "energy", "bond_dim", "discarded_weight"),
        rows,
        extra_header=extra,
    )
    return [path]


def _run_bernstein_trials(
    config: ExperimentConfig, out_dir: Path
) -> list[Path]:
    c = config.params
    spec = build_model("powerlaw_heisenberg", n=c["n"], alpha=c["alpha"])
    gamma = compute_gamma(spec, c["order"])
    seeds = make_rng(config.seed).integers(
        0, 2**31 - 1, size=(len(c["trials_list"]), c["repeats"])
    )
    rows = []
    for i, trials in enumerate(c["trials_list"]):
        for repeat in range(c["repeats"]):
            trial = fluctuation_norm(
                spec,
                c["order"],
                trials,
                c["n_steps"],
                c["t"],
                int(seeds[i, repeat]),
                gamma=gamma,
                delta=c["delta"],
            )
            if not math.isfinite(trial.observed_norm):
                raise NumericalError("bernstein_trials: non-finite norm")
            rows.append(
                (
                    trials,
                    repeat,
                    trial.n_steps,
                    trial.t,
                    trial.q,
                    trial.gamma,
                    trial.delta,
                    trial.observed_norm,
                    trial.bound_epsilon,
                    trial.violated,
                )
            )
    path = write_csv(
        out_dir / f"{config.basename}.csv",
        config,
        (
            "trials",
            "repeat",
            "n_steps",
            "t",
            "q",
            "gamma",
            "delta",
            "observed_norm",
            "bound_epsilon",
            "violated",
        ),
        rows,
    )
    return [path]


# ---------------------------------------------------------------------------
# Shot-sampled total variation distance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShotExperiment:
    """Shot-sampling setup on the transverse-plus-longitudinal Ising ring.

    The initial state is fixed to the uniform superposition over bitstrings
    (a Hadamard on every qubit applied to the all-zeros state). The shot
    budget for the averaged channel is split evenly across the two formulas;
    any remainder goes to the first formula and is logged.
    """

    mu: float
    lam: float
    t: float
    seed: int
    n: int = 5
    n_shot: int = 10_000

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two qubits")
        if self.n > DENSE_QUBIT_CAP:
            raise ValueError(f"dense simulation capped at n = {DENSE_QUBIT_CAP}")
        if self.n_shot < 1:
            raise ValueError("n_shot must be >= 1")
        if self.t < 0:
            raise ValueError("time must be non-negative")


@dataclass(frozen=True)
class ShotResult:
    """Exact and shot-sampled distributions for one channel choice."""

    channel: str
    tvd_exact: float
    tvd_sampled: float
    shots_first: int
    shots_second: int
    schrod_probs: np.ndarray
    channel_probs: np.ndarray
    counts: np.ndarray


def _shot_distributions(cfg: ShotExperiment):
    """Exact bitstring distributions of the target and both formulas."""
    spec = build_model("ising_tl", n=cfg.n, mu=cfg.mu, lam=cfg.lam)
    u_fwd, u_rev = _ordered_pair(spec, 1, cfg.t)
    target = _target_unitary(spec, cfg.t)
    dim = 2**cfg.n
    psi0 = np.full(dim, 1.0 / math.sqrt(dim), dtype=complex)

    def prob(u: np.ndarray) -> np.ndarray:
        return np.abs(u @ psi0) ** 2

    return prob(target), prob(u_fwd), prob(u_rev)


def _multinomial(rng: np.random.Generator, shots: int, probs: np.ndarray):
    if shots == 0:
        return np.zeros(probs.shape, dtype=np.int64)
    normalized = np.clip(probs, 0.0, None)
    normalized = normalized / normalized.sum()
    return rng.multinomial(shots, normalized)


def run_shots(cfg: ShotExperiment, channel: str) -> ShotResult:
    """Exact and sampled total variation distance for one channel.

    ``first_order_ab`` and ``first_order_ba`` are the two single-step
    first-order formulas; ``averaged`` pools half the shot budget from each
    (equal weights p = 1/2).
    """
    if channel not in SHOT_CHANNELS:
        raise ValueError(f"unknown channel {channel!r}; use one of {SHOT_CHANNELS}")
    schrod, p_ab, p_ba = _shot_distributions(cfg)
    rng = make_rng(cfg.seed * len(SHOT_CHANNELS) + SHOT_CHANNELS.index(channel))
    if channel == "first_order_ab":
        exact = p_ab
        shots_first, shots_second = cfg.n_shot, 0
        counts = _multinomial(rng, shots_first, p_ab)
    elif channel == "first_order_ba":
        exact = p_ba
        shots_first, shots_second = 0, cfg.n_shot
        counts = _multinomial(rng, cfg.n_shot, p_ba)
    else:
        exact = 0.5 * (p_ab + p_ba)
        shots_second = cfg.n_shot // 2
        shots_first = cfg.n_shot - shots_second
        if shots_first != shots_second:
            logger.warning(
                "averaged channel: odd shot budget %d split as %d + %d "
                "(remainder to the first formula)",
                cfg.n_shot,
                shots_first,
                shots_second,
            )
        counts = _multinomial(rng, shots_first, p_ab) + _multinomial(
            rng, shots_second, p_ba
        )
    empirical = counts / cfg.n_shot
    tvd_exact = 0.5 * float(np.abs(exact - schrod).sum())
    tvd_sampled = 0.5 * float(np.abs(empirical - schrod).sum())
    return ShotResult(
        channel=channel,
        tvd_exact=tvd_exact,
        tvd_sampled=tvd_sampled,
        shots_first=shots_first,
        shots_second=shots_second,
        schrod_probs=schrod,
        channel_probs=exact,
        counts=counts,
    )


def _run_shots_tvd(config: ExperimentConfig, out_dir: Path) -> list[Path]:
    c = config.params
    cfg = ShotExperiment(
        mu=c["mu"],
        lam=c["lam"],
        t=c["t"],
        seed=config.seed,
        n=c["n"],
        n_shot=c["n_shot"],
    )
    summary_rows = []
    hist_rows = []
    for channel in SHOT_CHANNELS:
        result = run_shots(cfg, channel)
        summary_rows.append(
            (
                channel,
                c["mu"],
                c["lam"],
                c["t"],
                c["n_shot"],
                result.shots_first,
                result.shots_second,
                result.tvd_exact,
                result.tvd_sampled,
            )
        )
        for index in range(result.schrod_probs.shape[0]):
            hist_rows.append(
                (
                    channel,
                    format(index, f"0{c['n']}b"),
                    float(result.schrod_probs[index]),
                    float(result.channel_probs[index]),
                    int(result.counts[index]),
                )
            )
    summary = write_csv(
        out_dir / f"{config.basename}.csv",
        config,
        (
            "channel",
            "mu",
            "lam",
            "t",
            "n_shot",
            "shots_first",
            "shots_second",
            "tvd_exact",
            "tvd_sampled",
        ),
        summary_rows,
    )
    histogram = write_csv(
        out_dir / f"{config.basename}_hist.csv",
        config,
        ("channel", "bitstring", "schrod_prob", "channel_prob", "count"),
        hist_rows,
    )
    return [summary, histogram]


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------


def _no_check(config: ExperimentConfig) -> None:
    return None


def _check_formula_orders(params: dict) -> None:
    for name in ("order", "orders"):
        if name not in params:
            continue
        values = params[name] if name == "orders" else (params[name],)
        for value in values:
            if value != 1 and (value < 2 or value % 2 != 0):
                raise ConfigError(name, "formula order must be 1 or even")


def _check_dense_cap(config: ExperimentConfig) -> None:
    n = config.params.get("n")
    if n is not None and n > DENSE_QUBIT_CAP:
        raise ConfigError("n", f"dense simulation capped at n = {DENSE_QUBIT_CAP}")
    _check_formula_orders(config.params)
    delta = config.params.get("delta")
    if config.experiment == "bernstein_trials" and not 0.0 < delta < 1.0:
        raise ConfigError("delta", "must lie strictly between 0 and 1")


def _check_size_scan(config: ExperimentConfig) -> None:
    sizes = config.params["sizes"]
    if max(sizes) > SIZE_SCAN_QUBIT_CAP:
        raise ConfigError(
            "sizes", f"size scan runs at n <= {SIZE_SCAN_QUBIT_CAP}"
        )
    if min(sizes) < 2:
        raise ConfigError("sizes", "system sizes must be >= 2")
    _check_formula_orders(config.params)


def _check_itebd(config: ExperimentConfig) -> None:
    dtau_list = config.params["dtau_list"]
    if any(b >= a for a, b in zip(dtau_list, dtau_list[1:])):
        raise ConfigError("dtau_list", "must be strictly descending")
    if any(d <= 0 for d in dtau_list):
        raise ConfigError("dtau_list", "entries must be positive")
    if (
        config.params["init"] == "stabilizer"
        and config.params["model"] == "heisenberg_nn"
    ):
        raise ConfigError(
            "init", "stabilizer projection needs a three-site model"
        )


@dataclass(frozen=True)
class ExperimentDef:
    """Schema, cross-field check, and runner for one experiment id."""

    schema: dict[str, FieldSpec]
    runner: Callable[[ExperimentConfig, Path], list[Path]]
    description: str
    check: Callable[[ExperimentConfig], None] = _no_check


EXPERIMENTS: dict[str, ExperimentDef] = {
    "loss_vs_p": ExperimentDef(
        schema={
            "n": FieldSpec("int", default=6, min_value=2),
            "h": FieldSpec("float", default=1.0),
            "t": FieldSpec("float", default=0.3, positive=True),
            "order": FieldSpec("int", default=2, min_value=1),
            "p_points": FieldSpec("int", default=21, min_value=2),
            "loss": FieldSpec(
                "str", default="analytic", choices=("analytic", "monte_carlo")
            ),
            "samples": FieldSpec("int", default=1000, min_value=2),
        },
        runner=_run_loss_vs_p,
        description="Mixture loss versus weight p for the XY-chain pair.",
        check=_check_dense_cap,
    ),
    "deviation_vs_samples": ExperimentDef(
        schema={
            "n": FieldSpec("int", default=6, min_value=2),
            "h": FieldSpec("float", default=1.0),
            "t": FieldSpec("float", default=0.3, positive=True),
            "orders": FieldSpec("int_list", default=(2, 6)),
            "p_values": FieldSpec("float_list", default=(0.0, 0.5)),
            "samples_list": FieldSpec(
                "int_list", default=(100, 316, 1000, 3162, 10000)
            ),
            "batches": FieldSpec("int", default=20, min_value=2),
        },
        runner=_run_deviation_vs_samples,
        description="Monte-Carlo loss spread against the closed-form value.",
        check=_check_dense_cap,
    ),
    "longtime_alpha_scan": ExperimentDef(
        schema={
            "n": FieldSpec("int", default=4, min_value=2),
            "alphas": FieldSpec("float_list", default=(0.0, 1.0, 2.0)),
            "t": FieldSpec("float", default=100.0, positive=True),
            "n_steps": FieldSpec("int", default=20000, min_value=1),
            "order": FieldSpec("int", default=2, min_value=1),
        },
        runner=_run_longtime_alpha_scan,
        description="Long-time mixture-over-orderings loss ratio per exponent.",
        check=_check_dense_cap,
    ),
    "loss_vs_steps": ExperimentDef(
        schema={
            "n": FieldSpec("int", default=6, min_value=2),
            "alpha": FieldSpec("float", default=0.0, min_value=0.0),
            "order": FieldSpec("int", default=2, min_value=1),
            "dt": FieldSpec("float", default=0.005, positive=True),
            "steps_list": FieldSpec(
                "int_list", default=(1, 2, 5, 10, 20, 50, 100, 200, 500, 1000)
            ),
        },
        runner=_run_loss_vs_steps,
        description="Loss growth with step count, single versus mixture.",
        check=_check_dense_cap,
    ),
    "symmetry_p_scan": ExperimentDef(
        schema={
            "n": FieldSpec("int", default=6, min_value=2),
            "alpha": FieldSpec("float", default=0.0, min_value=0.0),
            "order": FieldSpec("int", default=2, min_value=1),
            "dt": FieldSpec("float", default=0.002, positive=True),
            "n_steps": FieldSpec("int", default=50000, min_value=1),
            "p_points": FieldSpec("int", default=21, min_value=2),
        },
        runner=_run_symmetry_p_scan,
        description="Hadamard-conjugated pair loss versus weight p.",
        check=_check_dense_cap,
    ),
    "symmetry_steps": ExperimentDef(
        schema={
            "n": FieldSpec("int", default=6, min_value=2),
            "alphas": FieldSpec("float_list", default=(0.0, 1.0, 2.0, 4.0)),
            "order": FieldSpec("int", default=2, min_value=1),
            "dt": FieldSpec("float", default=0.002, positive=True),
            "steps_list": FieldSpec(
                "int_list",
                default=(100, 200, 500, 1000, 2000, 5000, 10000, 20000, 50000),
            ),
        },
        runner=_run_symmetry_steps,
        description="Hadamard pair at p = 1/2 versus step count.",
        check=_check_dense_cap,
    ),
    "symmetry_size_scan": ExperimentDef(
        schema={
            "sizes": FieldSpec("int_list", default=(3, 4, 5, 6, 7, 8)),
            "alphas": FieldSpec("float_list", default=(0.0, 1.0, 2.0, 4.0)),
            "m": FieldSpec("int", default=10, min_value=2),
            "order": FieldSpec("int", default=2, min_value=1),
            "t": FieldSpec("float", default=100.0, positive=True),
            "n_steps": FieldSpec("int", default=10000, min_value=1),
        },
        runner=_run_symmetry_size_scan,
        description="Random global-rotation averaging across system sizes.",
        check=_check_size_scan,
    ),
    "symmetry_M_scan": ExperimentDef(
        schema={
            "mode": FieldSpec(
                "str",
                default="generator_residuals",
                choices=("generator_residuals", "haar_orderings"),
            ),
            "n": FieldSpec("int", default=4, min_value=2),
            "alpha": FieldSpec("float", default=0.0, min_value=0.0),
            "order": FieldSpec("int", default=2, min_value=1),
            "t0": FieldSpec("float", default=0.05, positive=True),
            "t": FieldSpec("float", default=0.3, positive=True),
            "delta": FieldSpec("float", default=0.01, positive=True),
            "m_list": FieldSpec("int_list", default=(4, 8, 16, 32, 64)),
        },
        runner=_run_symmetry_m_scan,
        description="Set-size suppression law and the Haar-set asymptote.",
        check=_check_dense_cap,
    ),
    "itebd_convergence": ExperimentDef(
        schema={
            "model": FieldSpec("str", default="heisenberg_nn", choices=ITEBD_MODELS),
            "j": FieldSpec("float", default=1.0),
            "v": FieldSpec("float", default=-1.0),
            "h": FieldSpec("float", default=1.0),
            "formula_mode": FieldSpec(
                "str", default="averaged_k1", choices=FORMULA_MODES
            ),
            "combine": FieldSpec(
                "str", default="trajectories", choices=COMBINE_MODES
            ),
            "bond_dim": FieldSpec("int", default=8, min_value=1),
            "cutoff": FieldSpec("float", default=1e-12, min_value=0.0),
            "dtau_list": FieldSpec("float_list", default=(0.1, 0.01, 0.001)),
            "threshold": FieldSpec("float", default=1e-10, positive=True),
            "max_iterations": FieldSpec("int", default=100000, min_value=1),
            "init": FieldSpec(
                "str", default="product", choices=("product", "stabilizer")
            ),
            "settle_tol": FieldSpec("float", default=1e-4, positive=True),
        },
        runner=_run_itebd_convergence,
        description="Imaginary-time convergence log for one schedule run.",
        check=_check_itebd,
    ),
    "bernstein_trials": ExperimentDef(
        schema={
            "n": FieldSpec("int", default=4, min_value=2),
            "alpha": FieldSpec("float", default=0.0, min_value=0.0),
            "order": FieldSpec("int", default=1, min_value=1),
            "trials_list": FieldSpec("int_list", default=(8, 16, 32, 64, 128, 256)),
            "repeats": FieldSpec("int", default=5, min_value=1),
            "n_steps": FieldSpec("int", default=50, min_value=1),
            "t": FieldSpec("float", default=0.5, positive=True),
            "delta": FieldSpec("float", default=0.1),
        },
        runner=_run_bernstein_trials,
        description="Fluctuation norms of sampled compilations versus the bound.",
        check=_check_dense_cap,
    ),
    "shots_tvd": ExperimentDef(
        schema={
            "n": FieldSpec("int", default=5, min_value=2),
            "mu": FieldSpec("float", default=2.0),
            "lam": FieldSpec("float", default=2.0),
            "t": FieldSpec("float", default=0.05, min_value=0.0),
            "n_shot": FieldSpec("int", default=10000, min_value=1),
        },
        runner=_run_shots_tvd,
        description="Exact and shot-sampled TVD for singles and the average.",
        check=_check_dense_cap,
    ),
}


def run_experiment(config: ExperimentConfig, out_dir: str | Path) -> list[Path]:
    """Run one validated experiment; returns the written CSV paths."""
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    definition = EXPERIMENTS[config.experiment]
    return definition.runner(config, out_path)
