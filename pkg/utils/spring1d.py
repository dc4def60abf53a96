"""
Periodic ring of three nodes joined by three springs, one of them a bilinear
damage spring. Small enough to write the energy down explicitly, which makes
it the test bench for comparing the FAIEF trust region with the standard
(energy based) one and with plain Newton-CG.

Node 2 is pinned at the origin; the unknowns are the positions x0, x1 of
nodes 0 and 1. The ring closes with total length 3*xbar, so the elongations
are e0 = x0 (damage spring), e1 = x1 - x0 and e2 = 3*xbar - x1.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Tuple

import numpy as np

from utils.exceptions import ConfigError
from utils.krylov import KrylovConfig
from utils.solver import ConvergenceReport, NewtonDriver, SolverMethod, TrustRegionConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpringSystem:
    k: float = 1.0
    alpha: float = -1.0
    gamma0: float = 0.1
    xbar: float = 0.11

    def __post_init__(self):
        if not (self.k > 0 and self.gamma0 > 0):
            raise ConfigError(f"spring stiffness and onset stretch must be positive, got {self.k}, {self.gamma0}")
        if not np.isfinite(self.alpha):
            raise ConfigError("softening slope must be finite")

    @property
    def rupture(self) -> float:
        """Elongation where a softening spring carries no force any more"""
        if self.alpha >= 0:
            return np.inf
        return self.gamma0 * (1.0 - 1.0 / self.alpha)

    @property
    def start(self) -> np.ndarray:
        """Uniformly stretched ring"""
        return np.array([self.xbar, 2.0 * self.xbar])

    def elongations(self, dof: np.ndarray) -> np.ndarray:
        x0, x1 = dof
        return np.array([x0, x1 - x0, 3.0 * self.xbar - x1])

    def damage_spring(self, e: float) -> Tuple[float, float, float]:
        """Energy, force and tangent of the bilinear spring at elongation e"""
        k, g0, a = self.k, self.gamma0, self.alpha
        if e <= g0:
            return 0.5 * k * e * e, k * e, k
        e = min(e, self.rupture)
        s = e - g0
        energy = 0.5 * k * g0 * g0 + k * g0 * s + 0.5 * a * k * s * s
        if e >= self.rupture:
            return energy, 0.0, 0.0
        return energy, k * (g0 + a * s), a * k


def spring_eval(sys: SpringSystem, dof) -> Tuple[float, np.ndarray, np.ndarray]:
    """Energy W, force f = dW/dx and reduced stiffness K = d2W/dx2"""
    dof = np.asarray(dof, dtype=float)
    if dof.shape != (2,) or not np.all(np.isfinite(dof)):
        raise ConfigError(f"spring degrees of freedom must be 2 finite values, got {dof}")
    e0, e1, e2 = sys.elongations(dof)
    w0, f0, k0 = sys.damage_spring(e0)
    k = sys.k
    energy = w0 + 0.5 * k * e1 * e1 + 0.5 * k * e2 * e2
    force = np.array([f0 - k * e1, k * e1 - k * e2])
    stiffness = np.array([[k0 + k, -k], [-k, 2.0 * k]])
    return energy, force, stiffness


def full_stiffness(sys: SpringSystem, dof=None) -> np.ndarray:
    """3x3 stiffness over the node displacements (u0, u1, u2) before eliminating
    the rigid translation; defaults to the post-peak tangent alpha*k"""
    k_damage = sys.alpha * sys.k if dof is None else sys.damage_spring(sys.elongations(np.asarray(dof))[0])[2]
    k = sys.k
    # springs: (2, 0) damage, (0, 1), (1, 2)
    K = np.zeros((3, 3))
    for (i, j), stiffness in (((2, 0), k_damage), ((0, 1), k), ((1, 2), k)):
        K[i, i] += stiffness
        K[j, j] += stiffness
        K[i, j] -= stiffness
        K[j, i] -= stiffness
    return K


def landscape(sys: SpringSystem, x0_grid) -> np.ndarray:
    """W along x0 with x1 at its conditional minimizer (x0 + 3 xbar)/2"""
    x0_grid = np.asarray(x0_grid, dtype=float)
    x1 = 0.5 * (x0_grid + 3.0 * sys.xbar)
    return np.array([spring_eval(sys, (a, b))[0] for a, b in zip(x0_grid, x1)])


class SpringProblem:
    """The spring ring seen by the Newton drivers"""

    def __init__(self, sys: SpringSystem, dof=None):
        self.sys = sys
        self.dof = np.array(sys.start if dof is None else dof, dtype=float)
        self._refresh()

    def _refresh(self):
        self.energy_value, self.force, self.stiffness = spring_eval(self.sys, self.dof)

    def energy(self, p=None) -> float:
        if p is None:
            return self.energy_value
        return spring_eval(self.sys, self.dof + p)[0]

    def flux(self) -> np.ndarray:
        return self.force

    def rhs(self) -> np.ndarray:
        return -self.force

    def apply_system(self, v) -> np.ndarray:
        return self.stiffness @ np.asarray(v)

    def trial_flux(self, p) -> np.ndarray:
        return spring_eval(self.sys, self.dof + p)[1]

    def accept(self, p):
        self.dof = self.dof + p
        self._refresh()

    def commit_current(self):
        pass

    def state_norm(self) -> float:
        return float(np.linalg.norm(self.dof))

    def snapshot(self) -> np.ndarray:
        return self.dof.copy()


@dataclass
class SpringSolution:
    method: SolverMethod
    dof: np.ndarray
    trajectory: List[np.ndarray] = field(default_factory=list)
    report: Optional[ConvergenceReport] = None
    system: Optional[SpringSystem] = None

    @property
    def energies(self) -> np.ndarray:
        return np.array([spring_eval(self.system, x)[0] for x in self.trajectory])


def default_spring_config() -> TrustRegionConfig:
    # with eta_up = 0 the standard variant alone accepts a weak rupture-crossing step
    return TrustRegionConfig(R0=0.05, Rmax=1.0, eta_up=0.1, eta_eq=1e-12, eta_nr=1e-12, max_newton=200,
                             residual_mode="absolute")


def spring_solve(sys: SpringSystem, method, cfg: Optional[TrustRegionConfig] = None,
                 krylov: Optional[KrylovConfig] = None, dof=None) -> SpringSolution:
    """Solve the ring for equilibrium from the uniformly stretched state with one of the three methods"""
    method = SolverMethod(method)
    cfg = cfg or default_spring_config()
    if cfg.R0 is None:
        cfg = replace(cfg, R0=0.05)
    problem = SpringProblem(sys, dof)
    driver = NewtonDriver(method, cfg, krylov, energy=problem.energy, record_trace=True, record_iterates=True)
    driver.solve_step(problem, 0)
    report = driver.report
    logger.info("spring alpha=%g %s: status %s after %d newton iterations, dof %s",
                sys.alpha, method.value, report.status, report.total_newton_iters, problem.dof)
    return SpringSolution(method, problem.dof.copy(), list(report.iterates), report, sys)
