"""Command line interface for the experiment runner.

One subcommand per experiment id; each accepts ``--config PATH`` (JSON),
``--out DIR``, ``--seed INT`` (overrides the config seed), and
``--threads INT`` (caps the BLAS/OpenMP thread pools). Exit codes: 0 on
success, 2 on a configuration error, 3 on a numerical failure.

The heavy numerical modules are imported only after ``--threads`` has been
applied to the environment, so the thread cap reaches the BLAS pool.
"""

from __future__ import annotations

import argparse
import os
import sys

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_FAILURE = 3

THREAD_ENV_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)

# Kept in sync with experiments.EXPERIMENTS (asserted by the test suite);
# hardcoded here so the parser builds before any numerical import.
EXPERIMENT_IDS = (
    "loss_vs_p",
    "deviation_vs_samples",
    "longtime_alpha_scan",
    "loss_vs_steps",
    "symmetry_p_scan",
    "symmetry_steps",
    "symmetry_size_scan",
    "symmetry_M_scan",
    "itebd_convergence",
    "bernstein_trials",
    "shots_tvd",
)

_SUBCOMMAND_HELP = {
    "loss_vs_p": "mixture loss versus weight p for the XY-chain formula pair",
    "deviation_vs_samples": "Monte-Carlo loss spread versus sample count",
    "longtime_alpha_scan": "long-time mixture loss ratio per interaction exponent",
    "loss_vs_steps": "loss growth with step count, single versus mixture",
    "symmetry_p_scan": "Hadamard-conjugated pair loss versus weight p",
    "symmetry_steps": "Hadamard pair at p = 1/2 versus step count",
    "symmetry_size_scan": "random global-rotation averaging across system sizes",
    "symmetry_M_scan": "set-size suppression law and Haar-set asymptote",
    "itebd_convergence": "imaginary-time convergence log for one schedule run",
    "bernstein_trials": "sampled-compilation fluctuation norms versus the bound",
    "shots_tvd": "exact and shot-sampled bitstring TVD for the Ising ring",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trottermix",
        description="Deterministic CSV experiments for mixed product formulas.",
    )
    subparsers = parser.add_subparsers(
        dest="experiment", required=True, metavar="experiment"
    )
    for experiment_id in EXPERIMENT_IDS:
        sub = subparsers.add_parser(
            experiment_id, help=_SUBCOMMAND_HELP[experiment_id]
        )
        sub.add_argument(
            "--config", metavar="PATH", help="JSON config file for this experiment"
        )
        sub.add_argument(
            "--out",
            metavar="DIR",
            default=".",
            help="output directory for CSV files (default: current directory)",
        )
        sub.add_argument(
            "--seed",
            metavar="INT",
            type=int,
            help="random seed; overrides the config file seed",
        )
        sub.add_argument(
            "--threads",
            metavar="INT",
            type=int,
            help="cap for BLAS/OpenMP thread pools",
        )
    return parser


def _apply_thread_cap(threads: int | None) -> None:
    if threads is None:
        return
    if threads < 1:
        raise SystemExit("--threads must be a positive integer")
    for variable in THREAD_ENV_VARS:
        os.environ[variable] = str(threads)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _apply_thread_cap(args.threads)

    # Imported only now so the thread cap above reaches the BLAS pool.
    import numpy as np

    from . import experiments

    try:
        raw = (
            experiments.load_config_file(args.config) if args.config else {}
        )
        configured = raw.setdefault("experiment", args.experiment)
        if configured != args.experiment:
            raise experiments.ConfigError(
                "experiment",
                f"config file targets {configured!r} but the "
                f"{args.experiment!r} subcommand was invoked",
            )
        if args.seed is not None:
            raw["seed"] = args.seed
        config = experiments.validate_config(raw)
    except experiments.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    try:
        paths = experiments.run_experiment(config, args.out)
    except experiments.NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL_FAILURE
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: linear algebra error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL_FAILURE

    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
