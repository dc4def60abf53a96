import argparse
import logging
import os
import sys
import time
from typing import List, Optional

from dotenv import load_dotenv

# Load environment variables
load_dotenv()

from config import Config  # noqa: E402
from utils.exceptions import (  # noqa: E402
    ConfigError,
    HomogenizationError,
    KrylovError,
    OperatorInconsistencyError,
    SolverDivergence,
)
from utils.field_io import RunDirectory  # noqa: E402
from utils.run_config import RunConfig, load_run_config  # noqa: E402

logger = logging.getLogger("app")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGENCE = 2


def setup_logging(verbose: bool = False):
    level = logging.DEBUG if verbose else getattr(logging, Config.LOG_LEVEL, logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def load_experiment(name: str):
    """Runner of an experiment; modules are imported on demand"""
    if name == "spring1d":
        from experiments.spring_study import run_spring_study
        return run_spring_study
    if name == "eshelby":
        from experiments.eshelby_study import run_eshelby_study
        return run_eshelby_study
    if name == "damage_rve":
        from experiments.damage_rve import run_damage_rve
        return run_damage_rve
    if name == "projector_check":
        from experiments.projector_check import run_projector_check
        return run_projector_check
    raise ConfigError(f"unknown experiment {name!r}")


def experiment_grids(config: RunConfig) -> List[List[int]]:
    """Grids the projector is checked on before an experiment starts"""
    if config.experiment == "eshelby":
        return [[config.eshelby.n, config.eshelby.n]]
    if config.experiment == "damage_rve":
        return [[n, n] for n in config.damage.grids]
    if config.experiment == "projector_check":
        return config.projector_check.grids
    return []


def apply_seed(config: RunConfig, seed: Optional[int]) -> RunConfig:
    """--seed replaces the run seed and, for the damage ensemble, the seed list"""
    if seed is None:
        return config
    if seed < 0:
        raise ConfigError(f"seed must be non-negative, got {seed}")
    config.seed = seed
    config.damage.seeds = [seed]
    return config


def solve(args) -> int:
    config = apply_seed(load_run_config(args.config), args.seed)
    out = args.out or config.output_dir or os.path.join(Config.OUTPUT_DIR, config.name)
    run_dir = RunDirectory(out)
    runner = load_experiment(config.experiment)

    if args.check_projector:
        from experiments.projector_check import require_projector

        grids = experiment_grids(config)
        if grids:
            require_projector(grids, config.projector_check.schemes, config.projector_check.tolerance, config.seed)
        else:
            logger.warning("experiment %s has no grid; projector check skipped", config.experiment)

    logger.info("running %s into %s", config.experiment, run_dir.path)
    start = time.perf_counter()
    result = runner(config, run_dir, record_trace=args.trace)
    wall_time = time.perf_counter() - start

    run_dir.save_json("convergence_report.json", result.reports)
    run_dir.write_manifest(config.to_dict(), config.seed, wall_time,
                           extra={"summary": result.summary, "failures": result.failures})
    logger.info("%s finished in %.2f s", config.experiment, wall_time)

    if result.failures:
        raise SolverDivergence("did not converge: " + ", ".join(result.failures))
    print(run_dir.path)
    return EXIT_OK


def plot(args) -> int:
    from utils.plots import emit_plots

    for path in emit_plots(args.run_dir):
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="homog", description=f"{Config.APP_NAME} {Config.APP_VERSION}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    solve_parser = commands.add_parser("solve", help="run an experiment from a JSON configuration")
    solve_parser.add_argument("config", help="path to the run configuration")
    solve_parser.add_argument("--out", help="output directory (default: config output_dir or HOMOG_OUTPUT_DIR/name)")
    solve_parser.add_argument("--trace", action="store_true", help="write per-iteration solver traces")
    solve_parser.add_argument("--check-projector", action="store_true",
                              help="verify the projector invariants on the experiment grids first")
    solve_parser.add_argument("--seed", type=int, help="override the run seed")
    solve_parser.set_defaults(handler=solve)

    plot_parser = commands.add_parser("plot", help="render SVG figures of a finished run")
    plot_parser.add_argument("run_dir", help="run directory written by solve")
    plot_parser.set_defaults(handler=plot)
    return parser


def report_error(exc: Exception):
    kind = getattr(exc, "kind", "error")
    print(f"homog-error:{kind}: {exc}", file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.handler(args)
    except (SolverDivergence, KrylovError, OperatorInconsistencyError) as exc:
        report_error(exc)
        return EXIT_DIVERGENCE
    except HomogenizationError as exc:
        report_error(exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
