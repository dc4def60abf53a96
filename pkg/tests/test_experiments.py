import os

import numpy as np
import pandas as pd
import pytest

from experiments import damage_rve
from experiments.damage_rve import (
    build_damage_cell,
    build_tasks,
    ensemble_table,
    member_label,
    merge_curves,
    phase_material,
    run_damage_rve,
)
from experiments.eshelby_study import (
    EshelbyStudy,
    analytic_interior_strain,
    cut_rows,
    inclusion_phase,
    run_eshelby_study,
)
from experiments.projector_check import check_grids, require_projector
from utils.database import get_database_manager
from utils.exceptions import MicrostructureError, ProjectionError
from utils.field_io import RunDirectory, load_field
from utils.grid_fields import GridShape
from utils.krylov import KrylovConfig
from utils.materials import BilinearDamage, LinearElastic
from utils.run_config import DamagePhase, EshelbyConfig, load_run_config, parse_run_config
from utils.solver import TrustRegionConfig


def member(seed, ratios, grid=32, step=1e-3, status="converged"):
    curve = [{"step": i, "sum_eigenstrain": i * step, "stiffness_ratio": r, "damaged_qp_count": 0,
              "newton_iters": 1, "cg_iters": 5} for i, r in enumerate(ratios)]
    return {"seed": seed, "grid": grid, "step_size": step, "status": status, "curve": curve, "metadata": {}}


def test_equal_stiffness_inclusion_is_uniform():
    cfg = EshelbyConfig(stiffness_ratio=1.0, nu_inclusion=0.3)
    assert analytic_interior_strain(cfg) == pytest.approx(0.01)
    assert analytic_interior_strain(EshelbyConfig(mean_strain=[0.01, 0.0, 0.0])) is None


def test_soft_inclusion_strains_more_than_the_mean():
    assert analytic_interior_strain(EshelbyConfig()) > 0.01


def test_inclusion_phase_and_cut_rows():
    grid = GridShape(32, 32)
    phase = inclusion_phase(grid, 0.25)
    assert phase[16, 16] == 1 and phase[0, 0] == 0
    assert abs(phase.mean() - np.pi / 16) < 0.02
    rows = cut_rows(grid, 0.25)
    assert rows["below"] < rows["center"] < rows["above"]
    assert rows["center"] in (15, 16)


def test_eshelby_run_writes_difference_and_cuts(tmp_path):
    config = parse_run_config({"experiment": "eshelby", "eshelby": {"n": 24, "radius": 0.25},
                               "solver": {"eta_eq": 1e-10, "eta_nr": 1e-10}, "krylov": {"eta_cg": 1e-10}})
    run_dir = RunDirectory(str(tmp_path))
    result = run_eshelby_study(config, run_dir)
    assert result.failures == []
    assert result.summary["relative_difference"] <= 1e-6
    cuts = pd.read_csv(tmp_path / "eshelby" / "cuts.csv")
    assert sorted(cuts["line"].unique()) == ["above", "below", "center"]
    assert len(cuts) == 3 * 24
    assert os.path.exists(tmp_path / "eshelby" / "difference_scaled.npy")


@pytest.mark.slow
def test_eshelby_interior_matches_closed_form():
    cfg = EshelbyConfig(n=255)
    study = EshelbyStudy(cfg, TrustRegionConfig(eta_eq=1e-10, eta_nr=1e-10), KrylovConfig(eta_cg=1e-10))
    cell, report = study.solve(255, "modified_tr")
    assert report.converged
    check = study.interior_check(cell.grid, cell.eps)
    assert check["interior_pixels"] > 100
    assert check["relative_std"] <= 0.03
    assert check["relative_error"] <= 0.05


@pytest.mark.slow
def test_newton_count_decays_to_newton_cg_with_the_radius(config_path):
    config = load_run_config(config_path("eshelby.json"))
    assert config.eshelby.sweep_grids == [31, 63, 127]
    study = EshelbyStudy(config.eshelby, config.solver.to_trust_region(), config.krylov.to_krylov())
    sweep = study.rmax_sweep()
    for n, group in sweep.groupby("n"):
        group = group.sort_values("Rmax")
        assert group["Rmax"].max() / group["Rmax"].min() >= 1e4
        iters = group["newton_iters"].to_numpy()
        assert np.all(np.diff(iters) <= 0), f"newton count rises with Rmax on {n}x{n}: {iters}"
        largest = group.iloc[-1]
        assert largest["status"] == "converged"
        assert largest["newton_iters"] == largest["newton_cg_iters"]


def test_projector_check_collects_violations():
    summary = check_grids([[8, 8], [9, 9]], ["fourier", "linear_fe"], 1e-12)
    assert summary["violations"] == []
    with pytest.raises(ProjectionError):
        require_projector([[8, 8]], ["linear_fe"], -1.0)


def test_phase_material_choice():
    assert isinstance(phase_material(DamagePhase(11e9, 0.18), 1e-3), LinearElastic)
    law = phase_material(DamagePhase(12e9, 0.3, 60.0, 3e6), 0.05 / 64)
    assert isinstance(law, BilinearDamage)
    assert law.kappa0 == pytest.approx(3e6 / 12e9)


def test_tasks_are_ordered_by_seed_grid_step(tmp_path):
    config = parse_run_config({"experiment": "damage_rve", "damage": {
        "grids": [64, 32], "eigenstrain_steps": [5e-4, 2.5e-4], "seeds": [1, 0]}})
    tasks = build_tasks(config, RunDirectory(str(tmp_path)), False)
    assert [(t.seed, t.grid, t.step_size) for t in tasks][:3] == [(0, 32, 2.5e-4), (0, 32, 5e-4), (0, 64, 2.5e-4)]
    assert len(tasks) == 8
    assert tasks[0].member_dir.endswith(member_label(0, 32, 2.5e-4))


def test_merge_and_ensemble_tables():
    curves = merge_curves([member(0, [1.0, 0.95, 0.9]), member(1, [1.0, 0.97, 0.8])])
    assert list(curves.columns[:3]) == ["seed", "grid", "step_size"]
    assert len(curves) == 6
    stats = ensemble_table(curves)
    last = stats.iloc[-1]
    assert last["ratio_min"] == pytest.approx(0.8)
    assert last["ratio_max"] == pytest.approx(0.9)
    assert last["ratio_mean"] == pytest.approx(0.85)
    assert last["members"] == 2


def test_failed_member_is_recorded_and_the_run_completes(tmp_path, monkeypatch):
    def unplaceable(cfg, seed, n):
        if seed == 1:
            raise MicrostructureError("aggregate fraction 0.10 below target 0.30", achieved_fraction=0.1)
        return build_damage_cell(cfg, seed, n)

    monkeypatch.setattr(damage_rve, "build_damage_cell", unplaceable)
    config = parse_run_config({"experiment": "damage_rve", "name": "partial", "damage": {
        "grids": [32], "eigenstrain_steps": [1e-3], "eigenstrain_total": 1e-3, "seeds": [0, 1],
        "microstructure": {"aggregate_fraction": 0.3}}})
    result = run_damage_rve(config, RunDirectory(str(tmp_path)), workers=1)

    assert member_label(1, 32, 1e-3) in result.failures
    members = get_database_manager().get_members(result.summary["run_id"])
    assert [m["seed"] for m in members] == [0, 1]
    assert members[1]["status"] == "microstructure"
    assert members[1]["curve"] == []
    assert "below target" in members[1]["metadata"]["error"]
    assert members[0]["curve"][0]["stiffness_ratio"] == 1.0

    curves = pd.read_csv(tmp_path / "damage" / "curves.csv")
    assert set(curves["seed"]) == {0}
    summary = result.summary["members"]
    assert summary[1]["final_ratio"] is None and summary[1]["increments"] == 0
    assert os.path.exists(tmp_path / "damage" / "ensemble.csv")


def test_member_dumps_damage_and_kappa_with_traces(tmp_path):
    config = parse_run_config({"experiment": "damage_rve", "name": "dumps", "damage": {
        "grids": [32], "eigenstrain_steps": [1e-3], "eigenstrain_total": 2e-3, "seeds": [0],
        "microstructure": {"aggregate_fraction": 0.3}, "dump_damage": True}})
    result = run_damage_rve(config, RunDirectory(str(tmp_path)), record_trace=True, workers=1)
    member_dir = tmp_path / "damage" / "members" / member_label(0, 32, 1e-3)
    increments = result.summary["members"][0]["increments"]
    assert increments >= 1
    for index in range(1, increments + 1):
        kappa = load_field(str(member_dir / f"kappa_{index:03d}.npy"))
        damage = load_field(str(member_dir / f"D_{index:03d}.npy"))
        assert kappa.shape == damage.shape
        assert np.all(kappa.data >= 0.0)
    newton = pd.read_csv(member_dir / "trace" / "trace.csv")
    cg = pd.read_csv(member_dir / "trace" / "trace_cg.csv")
    assert set(newton["load_step"]) <= set(cg["load_step"])
    assert cg["load_step"].is_monotonic_increasing


def merged_ratios(curves, grid, step):
    member = curves[(curves["grid"] == grid) & np.isclose(curves["step_size"], step)]
    return member.set_index(member["sum_eigenstrain"].round(10))["stiffness_ratio"]


@pytest.mark.slow
def test_shipped_damage_configuration_is_mesh_and_step_objective(tmp_path, config_path):
    config = load_run_config(config_path("damage_rve.json"))
    result = run_damage_rve(config, RunDirectory(str(tmp_path)))
    assert result.failures == []
    curves = pd.read_csv(tmp_path / "damage" / "curves.csv")

    coarse, fine = merged_ratios(curves, 64, 5e-4), merged_ratios(curves, 128, 5e-4)
    assert len(coarse) == len(fine) == 9
    np.testing.assert_allclose(coarse.to_numpy(), fine.loc[coarse.index].to_numpy(), rtol=0.05)

    for grid in (64, 128):
        medium, small = merged_ratios(curves, grid, 5e-4), merged_ratios(curves, grid, 2.5e-4)
        assert len(small) == 17
        np.testing.assert_allclose(medium.to_numpy(), small.loc[medium.index].to_numpy(), rtol=0.05)


@pytest.mark.slow
def test_shipped_ensemble_is_monotone_bounded_and_reproducible(tmp_path, config_path):
    config = load_run_config(config_path("damage_ensemble.json"))
    config.damage.dump_damage = True
    result = run_damage_rve(config, RunDirectory(str(tmp_path)))
    assert result.failures == []

    curves = pd.read_csv(tmp_path / "damage" / "curves.csv")
    assert sorted(curves["seed"].unique()) == [0, 1, 2, 3, 4]
    for _, group in curves.groupby("seed"):
        ratios = group.sort_values("step")["stiffness_ratio"].to_numpy()
        assert ratios[0] == 1.0
        assert np.all(np.diff(ratios) <= 1e-8)
    assert len(pd.read_csv(tmp_path / "damage" / "ensemble.csv")) == 9

    members = tmp_path / "damage" / "members"
    for seed in range(5):
        member_dir = members / member_label(seed, 64, 5e-4)
        previous = None
        for index in range(1, 9):
            damage = load_field(str(member_dir / f"D_{index:03d}.npy")).data
            assert np.all((damage >= 0.0) & (damage <= 1.0))
            kappa = load_field(str(member_dir / f"kappa_{index:03d}.npy")).data
            if previous is not None:
                assert np.all(kappa >= previous)
            previous = kappa

    config.damage.seeds = [3]
    rerun = tmp_path / "rerun"
    run_damage_rve(config, RunDirectory(str(rerun)), workers=1)
    label = member_label(3, 64, 5e-4)
    with open(members / label / "curve.csv", "rb") as a, \
            open(rerun / "damage" / "members" / label / "curve.csv", "rb") as b:
        assert a.read() == b.read()
