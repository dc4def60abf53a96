from dataclasses import dataclass, field
from typing import Any, Dict, List

import pandas as pd

from utils.field_io import RunDirectory
from utils.solver import ConvergenceReport


@dataclass
class ExperimentResult:
    """What an experiment hands back to the command line: convergence reports
    keyed by solve label, a JSON-ready summary and the labels of required
    solves that did not converge"""

    reports: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    summary: Dict[str, Any] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)


def save_trace(run_dir: RunDirectory, label: str, report: ConvergenceReport):
    """Newton-level trace as trace/<label>.csv and the CG iterations of every
    subproblem as trace/<label>_cg.csv, one block of rows per load step"""
    if report.trace:
        run_dir.save_table(f"trace/{label}", pd.DataFrame(report.trace))
    for step in sorted({row["load_step"] for row in report.cg_trace}):
        run_dir.append_table(f"trace/{label}_cg", [row for row in report.cg_trace if row["load_step"] == step])
