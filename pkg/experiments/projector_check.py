import logging
from typing import Any, Dict, Iterable, List, Sequence

from experiments import ExperimentResult
from utils.exceptions import ProjectionError
from utils.fft_projection import DerivativeScheme, projector_self_test
from utils.field_io import RunDirectory
from utils.grid_fields import GridShape
from utils.run_config import RunConfig

logger = logging.getLogger(__name__)


def check_grids(grids: Iterable[Sequence[int]], schemes: Iterable[str], tolerance: float,
                seed: int = 0) -> Dict[str, Any]:
    """Projector invariants on random fields for every grid and scheme;
    violations above tolerance are collected rather than raised"""
    schemes = [DerivativeScheme(s) for s in schemes]
    reports: List[Dict[str, Any]] = []
    violations = []
    for nx, ny in grids:
        report = projector_self_test(GridShape(int(nx), int(ny)), schemes, seed)
        reports.append(report)
        for scheme, checks in report["schemes"].items():
            for name, value in checks.items():
                if not value <= tolerance:
                    violations.append(f"{nx}x{ny}/{scheme}/{name}={value:.3e}")
    worst = max((v for r in reports for c in r["schemes"].values() for v in c.values()), default=0.0)
    logger.info("projector check on %d grids: worst violation %.3e", len(reports), worst)
    return {"tolerance": tolerance, "worst": worst, "violations": violations, "grids": reports}


def require_projector(grids, schemes, tolerance: float, seed: int = 0) -> Dict[str, Any]:
    result = check_grids(grids, schemes, tolerance, seed)
    if result["violations"]:
        raise ProjectionError("projector invariants violated: " + ", ".join(result["violations"]))
    return result


def run_projector_check(config: RunConfig, run_dir: RunDirectory, record_trace: bool = False) -> ExperimentResult:
    cfg = config.projector_check
    summary = check_grids(cfg.grids, cfg.schemes, cfg.tolerance, config.seed)
    run_dir.save_json("projector_check.json", summary)
    if summary["violations"]:
        raise ProjectionError("projector invariants violated: " + ", ".join(summary["violations"]))
    return ExperimentResult(summary={"worst": summary["worst"], "tolerance": cfg.tolerance})
