import json
import os

import pandas as pd
import pytest

import app
from experiments import ExperimentResult
from utils.exceptions import KrylovError, OperatorInconsistencyError


def test_solve_writes_run_directory(tmp_path, config_path, capsys):
    out = tmp_path / "spring"
    assert app.main(["solve", config_path("spring1d.json"), "--out", str(out), "--trace"]) == app.EXIT_OK
    assert capsys.readouterr().out.strip() == str(out)
    with open(out / "manifest.json", encoding="utf-8") as handle:
        manifest = json.load(handle)
    assert manifest["config"]["experiment"] == "spring1d"
    assert manifest["failures"] == []
    assert "spring/summary.json" in manifest["files"]
    assert any(name.startswith("trace/") for name in manifest["files"])
    assert "trace/alpha_-1_modified_tr_cg.csv" in manifest["files"]
    cg = pd.read_csv(out / "trace" / "alpha_-1_modified_tr_cg.csv")
    assert {"load_step", "newton_iter", "iteration", "residual", "resets", "termination"} <= set(cg.columns)
    assert cg["termination"].dropna().isin(["converged", "boundary_hit", "negative_curvature", "max_iter"]).all()
    with open(out / "convergence_report.json", encoding="utf-8") as handle:
        reports = json.load(handle)
    assert reports["alpha_-1_modified_tr"]["status"] == "converged"
    assert reports["alpha_-1_newton_cg"]["status"] == "indefinite"


def test_invalid_configuration_exits_with_config_code(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"experiment": "spring1d", "spring": {"k": -1.0}}), encoding="utf-8")
    assert app.main(["solve", str(path), "--out", str(tmp_path / "out")]) == app.EXIT_CONFIG
    assert "homog-error:config:" in capsys.readouterr().err


def test_negative_seed_is_rejected(tmp_path, config_path, capsys):
    code = app.main(["solve", config_path("spring1d.json"), "--out", str(tmp_path), "--seed", "-1"])
    assert code == app.EXIT_CONFIG
    assert "homog-error:config:" in capsys.readouterr().err


def test_divergence_exit_code(tmp_path, config_path, monkeypatch, capsys):
    def failing(config, run_dir, record_trace=False):
        return ExperimentResult(failures=["alpha_-1_modified_tr"])

    monkeypatch.setattr(app, "load_experiment", lambda name: failing)
    out = tmp_path / "diverged"
    assert app.main(["solve", config_path("spring1d.json"), "--out", str(out)]) == app.EXIT_DIVERGENCE
    assert "homog-error:divergence:" in capsys.readouterr().err
    # the manifest is still written for inspection
    assert os.path.exists(out / "manifest.json")


def test_projector_check_experiment(tmp_path, config_path):
    out = tmp_path / "projector"
    assert app.main(["solve", config_path("projector_check.json"), "--out", str(out),
                     "--check-projector"]) == app.EXIT_OK
    with open(out / "projector_check.json", encoding="utf-8") as handle:
        summary = json.load(handle)
    assert summary["violations"] == []
    assert summary["worst"] <= 1e-12


def test_plot_command(tmp_path, config_path, capsys):
    out = tmp_path / "spring"
    app.main(["solve", config_path("spring1d.json"), "--out", str(out)])
    capsys.readouterr()
    assert app.main(["plot", str(out)]) == app.EXIT_OK
    printed = capsys.readouterr().out.split()
    assert len(printed) == 3 and all(p.endswith(".svg") for p in printed)


def test_plot_without_run_directory(tmp_path, capsys):
    assert app.main(["plot", str(tmp_path)]) == app.EXIT_CONFIG
    assert "homog-error:plot:" in capsys.readouterr().err


def test_seed_override_replaces_ensemble_seeds(config_path):
    config = app.apply_seed(app.load_run_config(config_path("damage_ensemble.json")), 9)
    assert config.seed == 9
    assert config.damage.seeds == [9]
    assert app.experiment_grids(config) == [[64, 64]]


def test_unknown_experiment_name():
    with pytest.raises(app.ConfigError):
        app.load_experiment("nope")


@pytest.mark.parametrize("error", [KrylovError("non-finite right-hand side"),
                                   OperatorInconsistencyError("negative predicted reduction")])
def test_solver_errors_exit_with_divergence_code(tmp_path, config_path, monkeypatch, capsys, error):
    def raising(config, run_dir, record_trace=False):
        raise error

    monkeypatch.setattr(app, "load_experiment", lambda name: raising)
    code = app.main(["solve", config_path("spring1d.json"), "--out", str(tmp_path / "out")])
    assert code == app.EXIT_DIVERGENCE
    assert f"homog-error:{error.kind}:" in capsys.readouterr().err
