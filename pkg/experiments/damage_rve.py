"""
Gel expansion damage in a meso-scale concrete cell under zero mean stress.

Each (seed, grid, eigenstrain step) combination is one member: a random
microstructure, a crack-band regularized damage cell and an eigenstrain ramp
with a stiffness evaluation after every converged increment. Members run in a
process pool, write into their own directories and are merged single-threaded
through the run registry in (seed, grid, step) order.
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from config import Config
from experiments import ExperimentResult, save_trace
from utils.database import get_database_manager
from utils.exceptions import HomogenizationError
from utils.field_io import RunDirectory, config_hash
from utils.fft_projection import DerivativeScheme
from utils.grid_fields import GridShape
from utils.homogenization import BoundaryCondition, BoundaryMode, Cell, DegradationCurve, LoadProgram, run_damage_study
from utils.materials import BilinearDamage, LinearElastic
from utils.microstructure import AGGREGATE, GEL, PASTE, FullerParams, generate_microstructure
from utils.plots import DAMAGE_CURVES
from utils.run_config import DamageConfig, DamagePhase, KrylovSettings, RunConfig, SolverSettings

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MemberTask:
    seed: int
    grid: int
    step_size: float
    damage: DamageConfig
    solver: SolverSettings
    krylov: KrylovSettings
    member_dir: str
    record_trace: bool = False

    @property
    def label(self) -> str:
        return member_label(self.seed, self.grid, self.step_size)


def member_label(seed: int, grid: int, step_size: float) -> str:
    return f"s{seed}_n{grid}_e{step_size:g}"


def phase_material(phase: DamagePhase, h: float):
    """Damageable when the phase carries a fracture energy, elastic otherwise"""
    if phase.Gc is None:
        return LinearElastic(phase.E, phase.nu)
    return BilinearDamage.regularized(phase.E, phase.nu, phase.ft0, phase.Gc, h)


def build_damage_cell(cfg: DamageConfig, seed: int, n: int):
    grid = GridShape(n, n, cfg.length, cfg.length)
    settings = cfg.microstructure
    fuller = FullerParams(d_min=settings.d_min, d_max=settings.d_max, exponent=settings.exponent,
                          gap=settings.gap, max_attempts=settings.max_attempts)
    microstructure = generate_microstructure(grid, seed, settings.aggregate_fraction, fuller,
                                             settings.gel_fraction, settings.gel_pocket_size)
    materials = {
        PASTE: phase_material(cfg.materials.paste, grid.h),
        AGGREGATE: phase_material(cfg.materials.aggregate, grid.h),
        GEL: LinearElastic(cfg.materials.gel.E, cfg.materials.gel.nu),
    }
    cell = Cell(grid, microstructure.phase, materials, DerivativeScheme.LINEAR_FE,
                BoundaryCondition(BoundaryMode.MEAN_STRESS), eigenstrain_phases=[GEL])
    return cell, microstructure


def run_member(task: MemberTask) -> Dict[str, Any]:
    """One ensemble member; runs inside a worker process. Library errors end
    the member with their kind as status instead of aborting the pool."""
    out = RunDirectory(task.member_dir)
    member = {
        "seed": task.seed,
        "grid": task.grid,
        "step_size": task.step_size,
        "status": "converged",
        "rows": [],
        "report": {},
        "aggregate_fraction": None,
        "gel_fraction": None,
        "reference_norm": None,
        "error": None,
    }

    def dump(index: int, current: Cell):
        damage = current.damage_field()
        if task.damage.dump_damage:
            out.save_field(f"D_{index:03d}", damage)
            out.save_field(f"kappa_{index:03d}", current.kappa_field())
        if task.damage.vtk:
            out.save_vtk(f"D_{index:03d}", current.grid, {"damage": damage.data[..., 0].mean(axis=2),
                                                          "phase": current.phase})

    try:
        cell, microstructure = build_damage_cell(task.damage, task.seed, task.grid)
        out.save_array("phase", microstructure.phase)
        member["aggregate_fraction"] = microstructure.aggregate_fraction
        member["gel_fraction"] = microstructure.fraction(GEL)

        ramp = LoadProgram.isotropic_eigenstrain(task.step_size, task.damage.eigenstrain_total)
        curve: DegradationCurve = run_damage_study(cell, ramp, task.solver.to_trust_region(),
                                                   task.krylov.to_krylov(), on_step=dump,
                                                   record_trace=task.record_trace)
    except HomogenizationError as exc:
        logger.error("member %s failed: %s", task.label, exc)
        member.update(status=exc.kind, error=str(exc))
        return member

    out.save_table("curve", curve.to_frame())
    if task.record_trace:
        save_trace(out, "trace", curve.report)
    member.update(status=curve.status, rows=curve.rows, report=curve.report.to_dict(),
                  reference_norm=curve.reference_norm)
    return member


def build_tasks(config: RunConfig, run_dir: RunDirectory, record_trace: bool) -> List[MemberTask]:
    cfg = config.damage
    return [
        MemberTask(seed, n, step, cfg, config.solver, config.krylov,
                   os.path.join(run_dir.path, "damage", "members", member_label(seed, n, step)), record_trace)
        for seed in sorted(cfg.seeds)
        for n in sorted(cfg.grids)
        for step in sorted(cfg.eigenstrain_steps)
    ]


def execute(tasks: List[MemberTask], on_result, workers: Optional[int] = None):
    """Run members, in a process pool when more than one worker is available.
    on_result is always called in the parent process."""
    workers = min(workers or Config.THREADS, len(tasks))
    if workers <= 1:
        for task in tasks:
            on_result(run_member(task))
        return
    logger.info("running %d members on %d workers", len(tasks), workers)
    with ProcessPoolExecutor(max_workers=workers) as executor:
        futures = [executor.submit(run_member, task) for task in tasks]
        for future in as_completed(futures):
            on_result(future.result())


def merge_curves(members: List[Dict[str, Any]]) -> pd.DataFrame:
    """Long table of all member curves in registry order; members that failed
    before their first row contribute nothing"""
    frames = []
    for member in members:
        if not member["curve"]:
            continue
        frame = pd.DataFrame(member["curve"], columns=DegradationCurve.COLUMNS)
        frame.insert(0, "step_size", member["step_size"])
        frame.insert(0, "grid", member["grid"])
        frame.insert(0, "seed", member["seed"])
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=["seed", "grid", "step_size"] + DegradationCurve.COLUMNS)
    return pd.concat(frames, ignore_index=True)


def ensemble_table(curves: pd.DataFrame) -> pd.DataFrame:
    """Min, max and mean stiffness ratio over seeds per (grid, step size, increment)"""
    grouped = curves.groupby(["grid", "step_size", "step", "sum_eigenstrain"], sort=True)["stiffness_ratio"]
    stats = grouped.agg(["min", "max", "mean", "count"]).reset_index()
    return stats.rename(columns={"min": "ratio_min", "max": "ratio_max", "mean": "ratio_mean", "count": "members"})


def run_damage_rve(config: RunConfig, run_dir: RunDirectory, record_trace: bool = False,
                   db_path: Optional[str] = None, workers: Optional[int] = None) -> ExperimentResult:
    run_id = f"{config.name}-{config_hash(config.to_dict())[:12]}"
    db = get_database_manager(db_path)
    previous = db.get_run(run_id)
    if previous is not None:
        logger.info("replacing run %s registered %s in %s", run_id, previous["timestamp"], previous["output_dir"])
    db.clear_run(run_id)
    db.register_run(run_id, config.experiment, config_hash(config.to_dict()), run_dir.path)

    tasks = build_tasks(config, run_dir, record_trace)

    def store(member: Dict[str, Any]):
        label = member_label(member["seed"], member["grid"], member["step_size"])
        logger.info("member %s finished: %s after %d increments", label, member["status"],
                    max(len(member["rows"]) - 1, 0))
        db.save_member(run_id, member["seed"], member["grid"], member["step_size"], member["status"],
                       member["rows"], {"report": member["report"],
                                        "aggregate_fraction": member["aggregate_fraction"],
                                        "gel_fraction": member["gel_fraction"],
                                        "reference_norm": member["reference_norm"],
                                        "error": member["error"]})

    execute(tasks, store, workers)

    members = db.get_members(run_id)
    curves = merge_curves(members)
    run_dir.save_table(DAMAGE_CURVES, curves)
    if len(config.damage.seeds) > 1:
        run_dir.save_table("damage/ensemble", ensemble_table(curves))

    result = ExperimentResult()
    for member in members:
        label = member_label(member["seed"], member["grid"], member["step_size"])
        result.reports[label] = member["metadata"]["report"]
        if member["status"] != "converged":
            result.failures.append(label)
    ratios = curves["stiffness_ratio"].to_numpy()
    result.summary = {
        "run_id": run_id,
        "members": [
            {
                "seed": m["seed"],
                "grid": m["grid"],
                "step_size": m["step_size"],
                "status": m["status"],
                "increments": max(len(m["curve"]) - 1, 0),
                "final_ratio": m["curve"][-1]["stiffness_ratio"] if m["curve"] else None,
                "aggregate_fraction": m["metadata"]["aggregate_fraction"],
                "gel_fraction": m["metadata"]["gel_fraction"],
                "error": m["metadata"].get("error"),
            }
            for m in members
        ],
        "min_ratio": float(np.min(ratios)) if ratios.size else None,
    }
    run_dir.save_json("damage/summary.json", result.summary)
    return result
