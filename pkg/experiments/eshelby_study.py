"""
Soft circular inhomogeneity in a periodic matrix under a mean strain, solved
with plain Newton-CG and with the modified trust region. The problem is
convex, so both solvers must land on the same strain field; the run also
checks the interior strain against the closed-form plane-strain solution and
optionally sweeps the trust radius.
"""

import logging
import math
from dataclasses import replace
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from experiments import ExperimentResult, save_trace
from utils.field_io import RunDirectory
from utils.fft_projection import DerivativeScheme
from utils.grid_fields import SQRT2, GridShape, QPField
from utils.homogenization import Cell, LoadIncrement, LoadKind, LoadProgram
from utils.krylov import KrylovConfig
from utils.materials import LinearElastic
from utils.plots import ESHELBY_CUTS, ESHELBY_SWEEP
from utils.run_config import EshelbyConfig, RunConfig
from utils.solver import ConvergenceReport, TrustRegionConfig, newton_cg_solve, trust_region_solve

logger = logging.getLogger(__name__)

MATRIX = 0
INCLUSION = 1


def plane_strain_moduli(E: float, nu: float) -> Tuple[float, float]:
    """In-plane bulk modulus k = lambda + mu and shear modulus mu"""
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam + mu, mu


def analytic_interior_strain(cfg: EshelbyConfig) -> Optional[float]:
    """Normal interior strain of the inclusion under equibiaxial mean strain.

    Dilute concentration A = (k_m + mu_m)/(k_i + mu_m) of a circular
    inhomogeneity, corrected for the finite area fraction f of the periodic
    cell with the Mori-Tanaka average: eps_in = A E / (f A + 1 - f).
    Returns None when the mean strain is not equibiaxial.
    """
    exx, eyy, exy = cfg.mean_strain
    if not (math.isclose(exx, eyy) and exy == 0.0):
        return None
    k_m, mu_m = plane_strain_moduli(cfg.E_matrix, cfg.nu_matrix)
    k_i, _ = plane_strain_moduli(cfg.stiffness_ratio * cfg.E_matrix, cfg.nu_inclusion)
    A = (k_m + mu_m) / (k_i + mu_m)
    f = math.pi * cfg.radius ** 2
    return A * exx / (f * A + 1.0 - f)


def inclusion_phase(grid: GridShape, radius: float) -> np.ndarray:
    """Centered disk of the given radius (fraction of the cell width)"""
    x, y = grid.pixel_centers()
    r = np.hypot(x - 0.5 * grid.lx, y - 0.5 * grid.ly)
    return np.where(r < radius * grid.lx, INCLUSION, MATRIX).astype(np.int8)


def eshelby_cell(cfg: EshelbyConfig, n: int) -> Cell:
    grid = GridShape(n, n)
    materials = {
        MATRIX: LinearElastic(cfg.E_matrix, cfg.nu_matrix),
        INCLUSION: LinearElastic(cfg.stiffness_ratio * cfg.E_matrix, cfg.nu_inclusion),
    }
    return Cell(grid, inclusion_phase(grid, cfg.radius), materials, DerivativeScheme(cfg.scheme))


def mean_strain_program(cfg: EshelbyConfig) -> LoadProgram:
    exx, eyy, exy = cfg.mean_strain
    return LoadProgram([LoadIncrement.of(LoadKind.STRAIN, (exx, eyy, SQRT2 * exy))])


def pixel_average(f: QPField) -> np.ndarray:
    """(ny, nx, ncomp) average over the quadrature points of each pixel"""
    return f.data.mean(axis=2)


def cut_rows(grid: GridShape, radius: float) -> Dict[str, int]:
    """Pixel rows of the centerline and of the lines r/2 below and above it"""
    _, y = grid.pixel_centers()
    yc = y[:, 0]
    center = 0.5 * grid.ly
    offset = 0.5 * radius * grid.lx
    targets = {"below": center - offset, "center": center, "above": center + offset}
    return {name: int(np.argmin(np.abs(yc - t))) for name, t in targets.items()}


class EshelbyStudy:
    def __init__(self, cfg: EshelbyConfig, solver: TrustRegionConfig, krylov: KrylovConfig,
                 record_trace: bool = False):
        self.cfg = cfg
        self.solver = solver
        self.krylov = krylov
        self.record_trace = record_trace

    def solve(self, n: int, method: str, solver: Optional[TrustRegionConfig] = None) -> Tuple[Cell, ConvergenceReport]:
        cell = eshelby_cell(self.cfg, n)
        program = mean_strain_program(self.cfg)
        solve = trust_region_solve if method == "modified_tr" else newton_cg_solve
        report = solve(cell, program, solver or self.solver, self.krylov, record_trace=self.record_trace)
        logger.info("eshelby %dx%d %s: %s in %d newton / %d cg iterations", n, n, method, report.status,
                    report.total_newton_iters, report.total_cg_iters)
        return cell, report

    def cuts(self, grid: GridShape, tr: QPField, ncg: QPField) -> pd.DataFrame:
        """Pixel-averaged shear strain (Mandel component) along the three cut lines"""
        x, _ = grid.pixel_centers()
        tr_px, ncg_px = pixel_average(tr), pixel_average(ncg)
        rows = []
        for line, j in cut_rows(grid, self.cfg.radius).items():
            for i in range(grid.nx):
                rows.append({"line": line, "y": (j + 0.5) * grid.hy, "x": x[j, i],
                             "modified_tr": tr_px[j, i, 2], "newton_cg": ncg_px[j, i, 2]})
        return pd.DataFrame(rows, columns=["line", "y", "x", "modified_tr", "newton_cg"])

    def interior_check(self, grid: GridShape, eps: QPField) -> Dict[str, Optional[float]]:
        """Uniformity of the inclusion strain away from the interface and the gap to the closed form"""
        x, y = grid.pixel_centers()
        r = np.hypot(x - 0.5 * grid.lx, y - 0.5 * grid.ly)
        interior = r < self.cfg.radius * grid.lx - 2.0 * grid.h
        exx = pixel_average(eps)[..., 0][interior]
        if exx.size == 0:
            return {"interior_pixels": 0, "mean": None, "relative_std": None, "analytic": None,
                    "relative_error": None}
        mean = float(exx.mean())
        analytic = analytic_interior_strain(self.cfg)
        return {
            "interior_pixels": int(exx.size),
            "mean": mean,
            "relative_std": float(exx.std() / abs(mean)) if mean else None,
            "analytic": analytic,
            "relative_error": abs(mean - analytic) / abs(analytic) if analytic else None,
        }

    def rmax_sweep(self) -> pd.DataFrame:
        """Newton and CG counts of the trust region for each radius (initial = maximum),
        against the Newton-CG counts on the same grid"""
        rows = []
        for n in self.cfg.sweep_grids:
            _, reference = self.solve(n, "newton_cg")
            for radius in sorted(self.cfg.sweep_rmax):
                R0 = radius if self.cfg.sweep_R0 is None else min(self.cfg.sweep_R0, radius)
                _, report = self.solve(n, "modified_tr", replace(self.solver, R0=R0, Rmax=radius))
                rows.append({
                    "n": n,
                    "Rmax": radius,
                    "newton_iters": report.total_newton_iters,
                    "cg_iters": report.total_cg_iters,
                    "rejections": sum(s.rejections for s in report.load_steps),
                    "status": report.status,
                    "newton_cg_iters": reference.total_newton_iters,
                    "newton_cg_cg_iters": reference.total_cg_iters,
                })
        return pd.DataFrame(rows)


def run_eshelby_study(config: RunConfig, run_dir: RunDirectory, record_trace: bool = False) -> ExperimentResult:
    cfg = config.eshelby
    study = EshelbyStudy(cfg, config.solver.to_trust_region(), config.krylov.to_krylov(), record_trace)
    result = ExperimentResult()

    fields = {}
    for method in ("newton_cg", "modified_tr"):
        cell, report = study.solve(cfg.n, method)
        fields[method] = cell.eps
        result.reports[method] = report.to_dict()
        if record_trace:
            save_trace(run_dir, method, report)
        if not report.converged:
            result.failures.append(method)
        run_dir.save_field(f"eshelby/strain_{method}", cell.eps)
    grid = cell.grid
    run_dir.save_array("eshelby/phase", cell.phase)

    tr, ncg = fields["modified_tr"], fields["newton_cg"]
    difference = tr - ncg
    run_dir.save_field("eshelby/difference_scaled", difference * cfg.difference_scale)
    run_dir.save_table(ESHELBY_CUTS, study.cuts(grid, tr, ncg))

    relative_difference = difference.norm() / ncg.norm()
    logger.info("solver fields differ by %.3e relative", relative_difference)
    result.summary = {
        "grid": grid.to_dict(),
        "relative_difference": relative_difference,
        "interior": study.interior_check(grid, tr),
    }

    if cfg.sweep_grids and cfg.sweep_rmax:
        sweep = study.rmax_sweep()
        run_dir.save_table(ESHELBY_SWEEP, sweep)
        result.summary["sweep_points"] = int(len(sweep))

    run_dir.save_json("eshelby/summary.json", result.summary)
    return result
