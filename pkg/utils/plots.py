import json
import logging
import os
from typing import Dict, List

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from config import Config  # noqa: E402
from utils.exceptions import PlotInputError  # noqa: E402

logger = logging.getLogger(__name__)

# Tables shared between the experiments and the plot emitter, without the .csv suffix
SPRING_LANDSCAPE = "spring/landscape_{tag}"
SPRING_TRAJECTORY = "spring/trajectory_{tag}"
ESHELBY_CUTS = "eshelby/cuts"
ESHELBY_SWEEP = "eshelby/rmax_sweep"
DAMAGE_CURVES = "damage/curves"

METHOD_STYLES = {
    "newton_cg": {"color": "tab:red", "marker": "x", "label": "Newton-CG"},
    "standard_tr": {"color": "tab:blue", "marker": "o", "label": "standard trust region"},
    "modified_tr": {"color": "tab:green", "marker": "+", "label": "modified trust region"},
}


def alpha_tag(alpha: float) -> str:
    return f"alpha_{alpha:g}"


def _csv(run_dir: str, table: str) -> str:
    return os.path.join(run_dir, table + ".csv")


class PlotComponents:
    """Deterministic SVG figures for the experiment outputs"""

    @staticmethod
    def save(fig, path: str) -> str:
        """Write an SVG whose bytes depend only on the plotted data"""
        plt.rcParams["svg.hashsalt"] = Config.SVG_HASH_SALT
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        return path

    @staticmethod
    def spring_landscape(landscape: pd.DataFrame, trajectories: pd.DataFrame, alpha: float, path: str) -> str:
        """Energy slice over x0 with each method's iterates on top"""
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(landscape["x0"], landscape["energy"], color="black", linewidth=1.0, label="W(x0)")
        for method, group in trajectories.groupby("method", sort=True):
            style = METHOD_STYLES.get(method, {"color": "gray", "marker": ".", "label": method})
            ax.plot(group["x0"], group["energy"], linestyle="--", linewidth=0.8, **style)
        ax.set_xlabel("x0")
        ax.set_ylabel("energy")
        ax.set_title(f"alpha = {alpha:g}")
        ax.legend(loc="best", fontsize="small")
        return PlotComponents.save(fig, path)

    @staticmethod
    def eshelby_cuts(cuts: pd.DataFrame, path: str) -> str:
        """Shear strain of both solvers along the three horizontal cut lines"""
        fig, ax = plt.subplots(figsize=(6, 4))
        colors = {"center": "tab:green", "below": "tab:purple", "above": "tab:orange"}
        for line, group in cuts.groupby("line", sort=True):
            color = colors.get(line, "gray")
            ax.plot(group["x"], group["modified_tr"], color=color, label=f"{line} trust region")
            ax.plot(group["x"], group["newton_cg"], color=color, linestyle=":", label=f"{line} Newton-CG")
        ax.set_xlabel("x")
        ax.set_ylabel("shear strain (Mandel)")
        ax.legend(loc="best", fontsize="small")
        return PlotComponents.save(fig, path)

    @staticmethod
    def rmax_sweep(sweep: pd.DataFrame, path: str) -> str:
        fig, ax = plt.subplots(figsize=(6, 4))
        for n, group in sweep.groupby("n", sort=True):
            ax.semilogx(group["Rmax"], group["newton_iters"], marker="o", label=f"{n}x{n}")
            ax.axhline(group["newton_cg_iters"].iloc[0], linestyle=":", linewidth=0.8, color="gray")
        ax.set_xlabel("maximum trust radius")
        ax.set_ylabel("Newton iterations")
        ax.legend(loc="best", fontsize="small")
        return PlotComponents.save(fig, path)

    @staticmethod
    def stiffness_curves(curves: pd.DataFrame, path: str) -> str:
        """One stiffness-ratio curve per (grid, step size) at the first seed"""
        first_seed = curves["seed"].min()
        subset = curves[curves["seed"] == first_seed]
        fig, ax = plt.subplots(figsize=(6, 4))
        for (grid, step), group in subset.groupby(["grid", "step_size"], sort=True):
            ax.plot(group["sum_eigenstrain"], group["stiffness_ratio"], marker=".",
                    label=f"{grid}x{grid}, step {step:g}")
        ax.set_xlabel("accumulated eigenstrain")
        ax.set_ylabel("||C|| / ||C0||")
        ax.legend(loc="best", fontsize="small")
        return PlotComponents.save(fig, path)

    @staticmethod
    def ensemble_band(curves: pd.DataFrame, path: str) -> str:
        """Min/max band and mean over seeds of the first (grid, step size) study"""
        grid = curves["grid"].min()
        step = curves[curves["grid"] == grid]["step_size"].min()
        subset = curves[(curves["grid"] == grid) & (curves["step_size"] == step)]
        stats = subset.groupby("sum_eigenstrain")["stiffness_ratio"].agg(["min", "max", "mean"]).reset_index()
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.fill_between(stats["sum_eigenstrain"], stats["min"], stats["max"], color="lightblue",
                        label="min/max over seeds")
        ax.plot(stats["sum_eigenstrain"], stats["mean"], color="tab:blue", label="mean")
        ax.set_xlabel("accumulated eigenstrain")
        ax.set_ylabel("||C|| / ||C0||")
        ax.legend(loc="best", fontsize="small")
        return PlotComponents.save(fig, path)


def _require(run_dir: str, names: List[str]):
    missing = [name for name in names if not os.path.exists(os.path.join(run_dir, name))]
    if missing:
        raise PlotInputError(missing)


def emit_plots(run_dir: str) -> List[str]:
    """Render the SVG figures of a finished run directory"""
    _require(run_dir, ["manifest.json"])
    with open(os.path.join(run_dir, "manifest.json"), "r", encoding="utf-8") as handle:
        manifest: Dict = json.load(handle)
    experiment = manifest.get("config", {}).get("experiment")
    written = []

    if experiment == "spring1d":
        tags = [(alpha, alpha_tag(alpha)) for alpha in manifest["config"]["spring"]["alphas"]]
        tables = [t.format(tag=tag) for _, tag in tags for t in (SPRING_LANDSCAPE, SPRING_TRAJECTORY)]
        _require(run_dir, [t + ".csv" for t in tables])
        for alpha, tag in tags:
            landscape = pd.read_csv(_csv(run_dir, SPRING_LANDSCAPE.format(tag=tag)))
            trajectories = pd.read_csv(_csv(run_dir, SPRING_TRAJECTORY.format(tag=tag)))
            written.append(PlotComponents.spring_landscape(
                landscape, trajectories, alpha, os.path.join(run_dir, f"spring_{tag}.svg")))

    elif experiment == "eshelby":
        _require(run_dir, [ESHELBY_CUTS + ".csv"])
        cuts = pd.read_csv(_csv(run_dir, ESHELBY_CUTS))
        written.append(PlotComponents.eshelby_cuts(cuts, os.path.join(run_dir, "eshelby_cuts.svg")))
        if os.path.exists(_csv(run_dir, ESHELBY_SWEEP)):
            written.append(PlotComponents.rmax_sweep(pd.read_csv(_csv(run_dir, ESHELBY_SWEEP)),
                                                     os.path.join(run_dir, "rmax_sweep.svg")))

    elif experiment == "damage_rve":
        _require(run_dir, [DAMAGE_CURVES + ".csv"])
        curves = pd.read_csv(_csv(run_dir, DAMAGE_CURVES))
        written.append(PlotComponents.stiffness_curves(curves, os.path.join(run_dir, "stiffness_curves.svg")))
        if curves["seed"].nunique() > 1:
            written.append(PlotComponents.ensemble_band(curves, os.path.join(run_dir, "ensemble_band.svg")))

    else:
        logger.info("nothing to plot for experiment %s", experiment)

    for path in written:
        logger.info("wrote %s", path)
    return written
