"""
Nonlinear drivers for problems written in terms of a generalized strain, its
conjugate stress (the flux) and a matrix-free linearized system.

The modified trust-region Newton-CG never evaluates an energy. It replaces the
actual energy change of a step p by the first-order incremental approximation
dW = <(sigma_prev + sigma_trial)/2, p>, which needs only the stress of the
previous solution and the stress at the trial point.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Protocol

import numpy as np

from config import Config
from utils.exceptions import ConfigError, OperatorInconsistencyError, SolverDivergence
from utils.grid_fields import QPField, field_inner
from utils.krylov import KrylovConfig, Termination, cg_steihaug

logger = logging.getLogger(__name__)


class SolverMethod(str, Enum):
    NEWTON_CG = "newton_cg"
    STANDARD_TR = "standard_tr"
    MODIFIED_TR = "modified_tr"


class ResidualMode(str, Enum):
    SCALED = "scaled"
    ABSOLUTE = "absolute"
    RELATIVE = "relative"


class NonlinearProblem(Protocol):
    """What the drivers need from a cell or any other discretized problem"""

    def flux(self):
        """Current (residual) stress conjugate to the unknown"""

    def rhs(self):
        """b = -G:flux, the negative projected gradient"""

    def apply_system(self, v):
        """Linearized system action G:B:v at the current state"""

    def trial_flux(self, p):
        """Flux at state + p with a shadow history"""

    def accept(self, p):
        """Move to state + p and commit the material history"""

    def commit_current(self):
        """Commit the history of the current state"""

    def state_norm(self) -> float:
        """Euclidean norm of the total unknown"""

    def snapshot(self):
        """Copy of the unknown, used when iterates are recorded"""


@dataclass
class TrustRegionConfig:
    R0: Optional[float] = None
    Rmax: Optional[float] = None
    eta_up: float = 0.0
    shrink_factor: float = Config.RADIUS_SHRINK_FACTOR
    shrink_trigger: float = Config.RADIUS_SHRINK_TRIGGER
    expand_trigger: float = Config.RADIUS_EXPAND_TRIGGER
    expand_factor: float = Config.RADIUS_EXPAND_FACTOR
    eta_eq: float = 1e-6
    eta_nr: float = 1e-8
    max_newton: int = 100
    residual_mode: ResidualMode = ResidualMode.RELATIVE
    stagnation_limit: int = Config.STAGNATION_LIMIT

    def __post_init__(self):
        self.residual_mode = ResidualMode(self.residual_mode)
        if self.R0 is not None and not self.R0 > 0:
            raise ConfigError(f"R0 must be positive, got {self.R0}")
        if self.R0 is not None and self.Rmax is not None and self.Rmax < self.R0:
            raise ConfigError(f"Rmax ({self.Rmax}) must not be smaller than R0 ({self.R0})")
        if not 0.0 <= self.eta_up < self.shrink_trigger:
            raise ConfigError(f"eta_up must lie in [0, {self.shrink_trigger}), got {self.eta_up}")
        if not (self.eta_eq > 0 and self.eta_nr > 0):
            raise ConfigError("equilibrium and Newton tolerances must be positive")
        if self.max_newton < 1 or self.stagnation_limit < 1:
            raise ConfigError("max_newton and stagnation_limit must be at least 1")

    def resolved(self, n_unknowns: int, increment_norm: float) -> "TrustRegionConfig":
        """Fill R0 = 0.1 sqrt(N) ||increment|| and Rmax = 100 R0 when unset"""
        R0 = self.R0
        if R0 is None:
            R0 = 0.1 * math.sqrt(n_unknowns) * increment_norm
            if not R0 > 0:
                raise ConfigError("cannot derive a default trust radius from a zero load increment")
        Rmax = self.Rmax if self.Rmax is not None else 100.0 * R0
        return replace(self, R0=R0, Rmax=max(Rmax, R0))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["residual_mode"] = self.residual_mode.value
        return data


@dataclass
class StepOutcome:
    rho_bar: float
    accepted: bool
    delta_m: float
    delta_W_bar: float
    new_radius: float
    step_norm: float = 0.0


@dataclass
class LoadStepReport:
    index: int
    status: str = "running"
    newton_iters: int = 0
    cg_iters_total: int = 0
    rejections: int = 0
    resets: int = 0
    final_residual: float = float("nan")
    radius_history: List[float] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"


@dataclass
class ConvergenceReport:
    method: str
    status: str = "converged"
    load_steps: List[LoadStepReport] = field(default_factory=list)
    trace: List[Dict[str, Any]] = field(default_factory=list)
    cg_trace: List[Dict[str, Any]] = field(default_factory=list)
    # field-sized arrays the driver itself keeps alive between Newton iterations
    solver_fields: Dict[str, int] = field(default_factory=dict)
    iterates: List[Any] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def total_newton_iters(self) -> int:
        return sum(s.newton_iters for s in self.load_steps)

    @property
    def total_cg_iters(self) -> int:
        return sum(s.cg_iters_total for s in self.load_steps)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "status": self.status,
            "total_newton_iters": self.total_newton_iters,
            "total_cg_iters": self.total_cg_iters,
            "solver_fields": self.solver_fields,
            "load_steps": [
                {**asdict(s), "converged": s.converged} for s in self.load_steps
            ],
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    def check(self) -> "ConvergenceReport":
        """Raise SolverDivergence unless every load step converged"""
        if not self.converged:
            raise SolverDivergence(f"{self.method} finished with status {self.status}", report=self)
        return self


def _data(x) -> np.ndarray:
    return x.data if isinstance(x, QPField) else np.asarray(x, dtype=float)


def _inner(a, b) -> float:
    if isinstance(a, QPField):
        return field_inner(a, b)
    return float(np.dot(np.ravel(a), np.ravel(b)))


def _norm(x) -> float:
    return float(np.linalg.norm(_data(x).ravel()))


def faief_delta(sigma_prev, sigma_trial, p) -> float:
    """First-order incremental approximate energy change: trapezoid of the two stresses along p"""
    if isinstance(sigma_prev, QPField):
        return field_inner((sigma_prev + sigma_trial) * 0.5, p)
    return 0.5 * _inner(np.asarray(sigma_prev) + np.asarray(sigma_trial), p)


def model_decrease(sigma_prev, apply_b: Callable, p) -> float:
    """Predicted reduction m(0) - m(p) = -sigma:p - 1/2 p:B:p of the quadratic model"""
    linear = _inner(sigma_prev, p)
    quadratic = _inner(p, apply_b(p))
    delta_m = -linear - 0.5 * quadratic
    roundoff = 1e-12 * (abs(linear) + abs(quadratic))
    if delta_m < -roundoff:
        raise OperatorInconsistencyError(
            f"negative predicted reduction {delta_m:.3e} (linear {linear:.3e}, quadratic {quadratic:.3e})"
        )
    return max(delta_m, 0.0)


def update_radius(rho_bar: float, R: float, step_norm: float, cfg: TrustRegionConfig) -> float:
    Rmax = cfg.Rmax if cfg.Rmax is not None else math.inf
    if rho_bar < cfg.shrink_trigger:
        return R * cfg.shrink_factor
    if rho_bar > cfg.expand_trigger and abs(step_norm - R) <= 1e-10 * R:
        return min(cfg.expand_factor * R, Rmax)
    return R


def residual_norm(b, mode: ResidualMode, reference: Optional[float] = None) -> float:
    """Norm of the projected residual: raw, divided by a reference, or the RMS
    in the quadrature-weighted field metric"""
    norm = _norm(b)
    if mode is ResidualMode.ABSOLUTE:
        return norm
    if mode is ResidualMode.RELATIVE:
        return norm / reference if reference else norm
    if isinstance(b, QPField):
        return math.sqrt(field_inner(b, b) / b.shape.volume)
    return norm / math.sqrt(_data(b).size)


class NewtonDriver:
    """Runs the Newton loop of one load step after another on a problem,
    carrying the trust radius across load steps"""

    def __init__(
        self,
        method: SolverMethod,
        cfg: TrustRegionConfig,
        krylov: Optional[KrylovConfig] = None,
        energy: Optional[Callable] = None,
        record_trace: bool = False,
        record_iterates: bool = False,
    ):
        self.method = SolverMethod(method)
        self.cfg = cfg
        self.krylov = krylov or KrylovConfig()
        if self.method is SolverMethod.NEWTON_CG:
            self.krylov = replace(self.krylov, reset_threshold=math.inf)
            self.radius = math.inf
        else:
            if cfg.R0 is None:
                raise ConfigError("trust-region driver needs a resolved R0")
            self.radius = cfg.R0
        if self.method is SolverMethod.STANDARD_TR and energy is None:
            raise ConfigError("standard trust region needs an explicit energy W(p)")
        self.energy = energy
        self.record_trace = record_trace
        self.record_iterates = record_iterates
        self.report = ConvergenceReport(method=self.method.value)

    def _log(self, row: Dict[str, Any]):
        if self.record_trace:
            self.report.trace.append(row)

    def _ratio(self, problem: NonlinearProblem, sigma_prev, p, delta_m: float):
        if self.method is SolverMethod.STANDARD_TR:
            delta_w = self.energy(p) - self.energy(None)
        else:
            sigma_trial = problem.trial_flux(p)
            delta_w = faief_delta(sigma_prev, sigma_trial, p)
        roundoff = 1e-12 * max(abs(_inner(sigma_prev, p)), 1e-300)
        if delta_m <= roundoff:
            # step below round-off of the model: nothing left to test
            return 1.0, delta_w
        return -delta_w / delta_m, delta_w

    def solve_step(self, problem: NonlinearProblem, index: int = 0) -> LoadStepReport:
        cfg = self.cfg
        step = LoadStepReport(index=index)
        self.report.load_steps.append(step)
        reference = None
        consecutive_rejections = 0

        if self.record_iterates:
            self.report.iterates.append(problem.snapshot())

        for iteration in range(cfg.max_newton):
            b = problem.rhs()
            if reference is None:
                # relative residuals are measured against the larger of the initial residual and flux
                reference = max(_norm(b), _norm(problem.flux())) or 1.0
            res = residual_norm(b, cfg.residual_mode, reference)
            step.final_residual = res
            if iteration == 0 and res <= cfg.eta_eq:
                step.status = "converged"
                break

            R = self.radius
            sub = cg_steihaug(problem.apply_system, b, R, self.krylov, record_trace=self.record_trace)
            if self.record_trace:
                self.report.cg_trace.extend({"load_step": index, "newton_iter": iteration, **row}
                                            for row in sub.trace)
            step.newton_iters += 1
            step.cg_iters_total += sub.iterations
            step.resets += sub.resets
            p = sub.p
            step_norm = _norm(p)

            if self.method is SolverMethod.NEWTON_CG:
                if sub.termination is Termination.NEGATIVE_CURVATURE:
                    step.status = "indefinite"
                    logger.info("newton-cg hit non-positive curvature at load step %d, iteration %d",
                                index, iteration)
                    self._log({"load_step": index, "iteration": iteration, "residual": res,
                               "radius": R, "rho_bar": float("nan"), "accepted": False,
                               "cg_iters": sub.iterations, "termination": sub.termination.value,
                               "step_norm": step_norm})
                    break
                outcome = StepOutcome(rho_bar=float("nan"), accepted=True, delta_m=float("nan"),
                                      delta_W_bar=float("nan"), new_radius=R, step_norm=step_norm)
            else:
                sigma_prev = problem.flux()
                self.report.solver_fields.setdefault("sigma_prev", int(_data(sigma_prev).nbytes))
                delta_m = model_decrease(sigma_prev, problem.apply_system, p)
                rho_bar, delta_w = self._ratio(problem, sigma_prev, p, delta_m)
                new_radius = update_radius(rho_bar, R, step_norm, cfg)
                outcome = StepOutcome(rho_bar=rho_bar, accepted=rho_bar > cfg.eta_up, delta_m=delta_m,
                                      delta_W_bar=delta_w, new_radius=new_radius, step_norm=step_norm)
                self.radius = new_radius
            step.radius_history.append(self.radius)

            self._log({"load_step": index, "iteration": iteration, "residual": res, "radius": R,
                       "rho_bar": outcome.rho_bar, "accepted": outcome.accepted,
                       "cg_iters": sub.iterations, "termination": sub.termination.value,
                       "step_norm": step_norm})
            logger.debug("load step %d iter %d: residual %.3e, |p| %.3e, R %.3e, rho %.4f, %s",
                         index, iteration, res, step_norm, R, outcome.rho_bar,
                         "accepted" if outcome.accepted else "rejected")

            if not outcome.accepted:
                step.rejections += 1
                consecutive_rejections += 1
                if consecutive_rejections >= cfg.stagnation_limit:
                    step.status = "stagnated"
                    logger.warning("load step %d stagnated after %d consecutive rejections",
                                   index, consecutive_rejections)
                    break
                continue

            consecutive_rejections = 0
            problem.accept(p)
            if self.record_iterates:
                self.report.iterates.append(problem.snapshot())

            res = residual_norm(problem.rhs(), cfg.residual_mode, reference)
            step.final_residual = res
            state_norm = problem.state_norm()
            r_nr = step_norm / state_norm if state_norm >= 1e-14 else math.inf
            interior = step_norm < R * (1.0 - 1e-10)
            if interior and (res <= cfg.eta_eq or r_nr <= cfg.eta_nr):
                step.status = "converged"
                break
        else:
            step.status = "diverged"

        if step.converged:
            problem.commit_current()
            logger.info("load step %d converged: %d newton, %d cg, %d rejected, residual %.3e",
                        index, step.newton_iters, step.cg_iters_total, step.rejections, step.final_residual)
        else:
            self.report.status = step.status
            logger.warning("load step %d ended with status %s (residual %.3e)",
                           index, step.status, step.final_residual)
        return step


def _solve_program(cell, load_program, cfg: TrustRegionConfig, method: SolverMethod,
                   krylov: Optional[KrylovConfig], record_trace: bool) -> ConvergenceReport:
    increments = list(load_program)
    if method is not SolverMethod.NEWTON_CG:
        cfg = cfg.resolved(cell.n_unknowns, cell.increment_scale(increments[0]) if increments else 0.0)
    driver = NewtonDriver(method, cfg, krylov, record_trace=record_trace)
    for index, increment in enumerate(increments):
        cell.apply_increment(increment)
        step = driver.solve_step(cell, index)
        if not step.converged:
            break
    return driver.report


def trust_region_solve(cell, load_program, cfg: Optional[TrustRegionConfig] = None,
                       krylov: Optional[KrylovConfig] = None, record_trace: bool = False) -> ConvergenceReport:
    """Modified trust-region Newton-CG over a load program, accepting steps on the FAIEF ratio"""
    return _solve_program(cell, load_program, cfg or TrustRegionConfig(), SolverMethod.MODIFIED_TR,
                          krylov, record_trace)


def newton_cg_solve(cell, load_program, cfg: Optional[TrustRegionConfig] = None,
                    krylov: Optional[KrylovConfig] = None, record_trace: bool = False) -> ConvergenceReport:
    """Plain Newton-CG: unconstrained CG steps, every step accepted"""
    return _solve_program(cell, load_program, cfg or TrustRegionConfig(), SolverMethod.NEWTON_CG,
                          krylov, record_trace)
