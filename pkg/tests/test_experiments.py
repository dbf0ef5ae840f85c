"""Tests for the experiment runner, CSV artifacts, and the CLI."""

import json
import math

import numpy as np
import pytest

from trottermix import cli
from trottermix.experiments import (
    EXPERIMENTS,
    ConfigError,
    NumericalError,
    ShotExperiment,
    format_cell,
    run_experiment,
    run_shots,
    validate_config,
)


def make_config(**overrides):
    raw = {"experiment": "itebd_convergence", "seed": 5}
    raw.update(overrides)
    return validate_config(raw)


FAST_ITEBD = {
    "model": "heisenberg_nn",
    "formula_mode": "k1",
    "bond_dim": 8,
    "dtau_list": [0.2, 0.1],
    "threshold": 1e-3,
    "max_iterations": 400,
}


# ---------------------------------------------------------------------------
# Config validation
# ---------------------------------------------------------------------------


def test_validate_config_applies_defaults():
    config = make_config()
    assert config.params["model"] == "heisenberg_nn"
    assert config.params["bond_dim"] == 8
    assert config.params["dtau_list"] == (0.1, 0.01, 0.001)
    assert config.params["init"] == "product"
    assert config.seed == 5


def test_validate_config_rejects_unknown_field_by_name():
    with pytest.raises(ConfigError, match="bond_dmi"):
        make_config(bond_dmi=12)


def test_validate_config_requires_experiment():
    with pytest.raises(ConfigError, match="experiment"):
        validate_config({"seed": 0})
    with pytest.raises(ConfigError, match="must be one of"):
        validate_config({"experiment": "not_an_experiment", "seed": 0})


def test_validate_config_requires_seed():
    with pytest.raises(ConfigError, match="seed"):
        validate_config({"experiment": "itebd_convergence"})


def test_validate_config_checks_choices_and_kinds():
    with pytest.raises(ConfigError, match="formula_mode"):
        make_config(formula_mode="k3")
    with pytest.raises(ConfigError, match="bond_dim"):
        make_config(bond_dim=0)
    with pytest.raises(ConfigError, match="threshold"):
        make_config(threshold=-1.0)
    with pytest.raises(ConfigError, match="dtau_list"):
        make_config(dtau_list=[0.01, 0.1])


def test_validate_config_rejects_stabilizer_init_for_two_site_model():
    with pytest.raises(ConfigError, match="init"):
        make_config(model="heisenberg_nn", init="stabilizer")
    config = make_config(model="zxz_field", init="stabilizer")
    assert config.params["init"] == "stabilizer"


def test_cli_ids_match_experiment_registry():
    assert cli.EXPERIMENT_IDS == tuple(EXPERIMENTS)


# ---------------------------------------------------------------------------
# CSV artifacts
# ---------------------------------------------------------------------------


def test_format_cell_uses_17_significant_digits():
    assert format_cell(1.0 / 3.0) == "0.33333333333333331"
    assert format_cell(True) == "true"
    assert format_cell(7) == "7"
    assert format_cell(np.float64(0.5)) == "0.5"
    with pytest.raises(NumericalError, match="non-finite"):
        format_cell(float("nan"))
    with pytest.raises(NumericalError, match="non-finite"):
        format_cell(math.inf)


def test_itebd_run_writes_provenance_and_settle_header(tmp_path):
    config = make_config(**FAST_ITEBD)
    paths = run_experiment(config, tmp_path)
    assert len(paths) == 1
    lines = paths[0].read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# artifact_version=")
    assert lines[1] == "# experiment=itebd_convergence"
    assert lines[2] == "# seed=5"
    assert lines[3].startswith("# config=")
    echoed = json.loads(lines[3].split("=", 1)[1])
    assert echoed["experiment"] == "itebd_convergence"
    assert echoed["bond_dim"] == FAST_ITEBD["bond_dim"]
    header_keys = [
        line[2:].split("=", 1)[0] for line in lines if line.startswith("# ")
    ]
    assert "converged" in header_keys
    assert "total_iterations" in header_keys
    assert "energy_settled_iteration" in header_keys
    column_row = next(
        line for line in lines if not line.startswith("#")
    )
    assert column_row == "dtau,iteration,distance,energy,bond_dim,discarded_weight"


def test_runs_are_byte_identical_for_equal_configs(tmp_path):
    raw = {"experiment": "itebd_convergence", "seed": 5, **FAST_ITEBD}
    first = run_experiment(validate_config(dict(raw)), tmp_path / "a")
    second = run_experiment(
        validate_config(json.loads(json.dumps(raw))), tmp_path / "b"
    )
    assert first[0].read_bytes() == second[0].read_bytes()


def test_seed_changes_the_artifact(tmp_path):
    base = run_experiment(make_config(**FAST_ITEBD), tmp_path / "a")
    other = run_experiment(
        validate_config(
            {"experiment": "itebd_convergence", "seed": 6, **FAST_ITEBD}
        ),
        tmp_path / "b",
    )
    assert base[0].read_bytes() != other[0].read_bytes()


def test_out_field_renames_the_artifact(tmp_path):
    config = make_config(out="renamed", **FAST_ITEBD)
    paths = run_experiment(config, tmp_path)
    assert paths[0].name == "renamed.csv"


# ---------------------------------------------------------------------------
# Shot splitting
# ---------------------------------------------------------------------------


def test_odd_shot_budget_gives_remainder_to_first_formula():
    cfg = ShotExperiment(mu=2.0, lam=2.0, t=0.05, seed=3, n=3, n_shot=101)
    result = run_shots(cfg, "averaged")
    assert result.shots_first == 51
    assert result.shots_second == 50
    assert int(result.counts.sum()) == 101


def test_single_channels_use_full_budget():
    cfg = ShotExperiment(mu=2.0, lam=2.0, t=0.05, seed=3, n=3, n_shot=100)
    forward = run_shots(cfg, "first_order_ab")
    assert (forward.shots_first, forward.shots_second) == (100, 0)
    reverse = run_shots(cfg, "first_order_ba")
    assert (reverse.shots_first, reverse.shots_second) == (0, 100)
    with pytest.raises(ValueError, match="channel"):
        run_shots(cfg, "thirds")


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def test_cli_runs_experiment_and_prints_paths(tmp_path, capsys):
    config_path = tmp_path / "run.json"
    config_path.write_text(
        json.dumps({"seed": 5, **FAST_ITEBD}), encoding="utf-8"
    )
    code = cli.main(
        [
            "itebd_convergence",
            "--config",
            str(config_path),
            "--out",
            str(tmp_path / "out"),
        ]
    )
    assert code == 0
    printed = capsys.readouterr().out.strip()
    assert printed.endswith("itebd_convergence.csv")


def test_cli_seed_flag_overrides_config(tmp_path, capsys):
    config_path = tmp_path / "run.json"
    config_path.write_text(
        json.dumps({"seed": 5, **FAST_ITEBD}), encoding="utf-8"
    )
    assert (
        cli.main(
            [
                "itebd_convergence",
                "--config",
                str(config_path),
                "--seed",
                "6",
                "--out",
                str(tmp_path / "out"),
            ]
        )
        == 0
    )
    text = (tmp_path / "out" / "itebd_convergence.csv").read_text(
        encoding="utf-8"
    )
    assert "# seed=6" in text


def test_cli_reports_config_errors_with_exit_2(tmp_path, capsys):
    config_path = tmp_path / "bad.json"
    config_path.write_text(
        json.dumps({"seed": 5, "bond_dmi": 4}), encoding="utf-8"
    )
    code = cli.main(
        ["itebd_convergence", "--config", str(config_path), "--out", str(tmp_path)]
    )
    assert code == 2
    assert "bond_dmi" in capsys.readouterr().err


def test_cli_rejects_config_for_other_subcommand(tmp_path, capsys):
    config_path = tmp_path / "mismatch.json"
    config_path.write_text(
        json.dumps({"experiment": "loss_vs_p", "seed": 1}), encoding="utf-8"
    )
    code = cli.main(
        ["itebd_convergence", "--config", str(config_path), "--out", str(tmp_path)]
    )
    assert code == 2


def test_cli_missing_config_file_is_a_config_error(tmp_path, capsys):
    code = cli.main(
        [
            "itebd_convergence",
            "--config",
            str(tmp_path / "absent.json"),
            "--out",
            str(tmp_path),
        ]
    )
    assert code == 2
    assert "cannot read" in capsys.readouterr().err


def test_cli_maps_numerical_failures_to_exit_3(tmp_path, capsys, monkeypatch):
    from trottermix import experiments

    def boom(config, out_dir):
        raise NumericalError("synthetic numerical failure")

    monkeypatch.setattr(experiments, "run_experiment", boom)
    code = cli.main(
        ["itebd_convergence", "--seed", "1", "--out", str(tmp_path)]
    )
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


def test_cli_requires_subcommand(capsys):
    with pytest.raises(SystemExit):
        cli.main([])
