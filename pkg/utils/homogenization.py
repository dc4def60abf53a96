"""
The periodic cell problem: phase map, material assignment, boundary
conditions, load programs, the matrix-free system G:B:(.) and the homogenized
stiffness.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional

import numpy as np
import pandas as pd

from utils.exceptions import ConfigError, GridError, KrylovError, OperatorInconsistencyError
from utils.fft_projection import (
    DerivativeScheme,
    ZeroFrequencyMode,
    apply_projection,
    build_derivative,
    build_projection,
)
from utils.grid_fields import GridShape, QPField, apply_rank4, field_mean
from utils.krylov import KrylovConfig, Termination, cg_steihaug
from utils.materials import BilinearDamage, DamageState, LinearElastic, Material, commit_state, evaluate
from utils.solver import ConvergenceReport, NewtonDriver, SolverMethod, TrustRegionConfig

logger = logging.getLogger(__name__)


class LoadKind(str, Enum):
    STRAIN = "strain"
    STRESS = "stress"
    EIGENSTRAIN = "eigenstrain"


class BoundaryMode(str, Enum):
    MEAN_STRAIN = "mean_strain"
    MEAN_STRESS = "mean_stress"


@dataclass
class BoundaryCondition:
    """Mean-strain or mean-stress control; target holds the accumulated mean stress"""

    mode: BoundaryMode = BoundaryMode.MEAN_STRAIN
    target: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.mode = BoundaryMode(self.mode)
        self.target = np.asarray(self.target, dtype=float).reshape(3)
        if not np.all(np.isfinite(self.target)):
            raise ConfigError("mean stress target must be finite")

    @property
    def zero_freq_mode(self) -> ZeroFrequencyMode:
        if self.mode is BoundaryMode.MEAN_STRESS:
            return ZeroFrequencyMode.STRESS_CONTROL
        return ZeroFrequencyMode.STRAIN_CONTROL


@dataclass(frozen=True)
class LoadIncrement:
    kind: LoadKind
    value: tuple

    @classmethod
    def of(cls, kind, value) -> "LoadIncrement":
        value = np.asarray(value, dtype=float).reshape(-1)
        if value.size != 3:
            raise ConfigError(f"load increments are Mandel vectors of length 3, got {value.size}")
        if not np.all(np.isfinite(value)):
            raise ConfigError("load increment must be finite")
        return cls(LoadKind(kind), tuple(float(v) for v in value))

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.value)


@dataclass
class LoadProgram:
    increments: List[LoadIncrement]

    def __post_init__(self):
        if not self.increments:
            raise ConfigError("load program needs at least one increment")

    @classmethod
    def uniform(cls, kind, step, count: int) -> "LoadProgram":
        """count equal increments of size step"""
        if count < 1:
            raise ConfigError(f"increment count must be at least 1, got {count}")
        return cls([LoadIncrement.of(kind, step)] * count)

    @classmethod
    def isotropic_eigenstrain(cls, step: float, total: float) -> "LoadProgram":
        """Equibiaxial eigenstrain ramp in increments of step up to total"""
        count = int(round(total / step))
        if count < 1 or abs(count * step - total) > 1e-9 * total:
            raise ConfigError(f"eigenstrain total {total} is not a multiple of the step {step}")
        return cls.uniform(LoadKind.EIGENSTRAIN, (step, step, 0.0), count)

    def __iter__(self) -> Iterator[LoadIncrement]:
        return iter(self.increments)

    def __len__(self) -> int:
        return len(self.increments)

    def cumulative(self, kind) -> np.ndarray:
        """Running sum of the increments of one kind, shaped (len, 3)"""
        kind = LoadKind(kind)
        values = np.array([inc.vector if inc.kind is kind else np.zeros(3) for inc in self.increments])
        return np.cumsum(values, axis=0)


@dataclass
class _PhaseGroup:
    material: Material
    index: np.ndarray
    state: Optional[DamageState] = None


class Cell:
    """Periodic unit cell with its current strain, stress and tangent"""

    def __init__(
        self,
        grid: GridShape,
        phase: np.ndarray,
        materials: Dict[int, Material],
        scheme=DerivativeScheme.LINEAR_FE,
        bc: Optional[BoundaryCondition] = None,
        eigenstrain_phases: Iterable[int] = (),
    ):
        phase = np.asarray(phase)
        if phase.shape != (grid.ny, grid.nx):
            raise GridError(f"phase map shaped {phase.shape}, expected {(grid.ny, grid.nx)}")
        missing = set(np.unique(phase).tolist()) - set(materials)
        if missing:
            raise ConfigError(f"phases without material: {sorted(missing)}")

        self.bc = bc or BoundaryCondition()
        self.derivative = build_derivative(scheme, grid)
        self.grid = self.derivative.shape
        self.projection = build_projection(self.derivative, self.bc.zero_freq_mode)
        self._strain_projection = None
        self.phase = phase
        self.materials = dict(materials)

        phase_qp = np.repeat(phase[:, :, None], self.grid.nq, axis=2).ravel()
        self._groups: Dict[int, _PhaseGroup] = {}
        for mat_id, material in self.materials.items():
            index = np.flatnonzero(phase_qp == mat_id)
            if index.size == 0:
                continue
            state = DamageState.fresh(index.size) if isinstance(material, BilinearDamage) else None
            self._groups[mat_id] = _PhaseGroup(material, index, state)

        self.eigenstrain_phases = set(eigenstrain_phases)
        for mat_id in self.eigenstrain_phases:
            if not isinstance(self.materials.get(mat_id), LinearElastic):
                raise ConfigError(f"eigenstrain phase {mat_id} must be linear elastic")
        self._eig_mask = np.isin(phase_qp, list(self.eigenstrain_phases)).reshape(
            self.grid.ny, self.grid.nx, self.grid.nq)

        self.eps = QPField.zeros(self.grid)
        self.eps_eig = QPField.zeros(self.grid)
        self.applied_strain = np.zeros(3)
        self._trial = None
        self.sigma, self.tangent = self._evaluate(self.eps)

    # constitutive evaluation

    def _evaluate(self, eps: QPField, secant: bool = False):
        # materials see the elastic part; a positive eigenstrain is a free expansion
        eval_flat = (eps.data - self.eps_eig.data).reshape(-1, 3)
        sigma = np.zeros_like(eval_flat)
        tangent = np.zeros((eval_flat.shape[0], 3, 3))
        for group in self._groups.values():
            if secant and group.state is not None:
                d = group.material.damage(group.state.kappa_committed)
                C = group.material.stiffness
                sigma[group.index] = (1.0 - d)[:, None] * (eval_flat[group.index] @ C.T)
                tangent[group.index] = (1.0 - d)[:, None, None] * C
                continue
            s, b = evaluate(group.material, eval_flat[group.index], group.state)
            sigma[group.index] = s
            tangent[group.index] = b
        shape = (self.grid.ny, self.grid.nx, self.grid.nq)
        return QPField(self.grid, 2, sigma.reshape(*shape, 3)), QPField(self.grid, 4, tangent.reshape(*shape, 9))

    def _commit(self):
        for group in self._groups.values():
            if group.state is not None:
                commit_state(group.state)

    # load program

    @property
    def n_unknowns(self) -> int:
        return self.grid.n_qp * 3

    def increment_scale(self, increment: LoadIncrement) -> float:
        """RMS strain magnitude an increment imposes on the cell"""
        value = increment.vector
        if increment.kind is LoadKind.STRAIN:
            return float(np.linalg.norm(value))
        if increment.kind is LoadKind.EIGENSTRAIN:
            return float(np.linalg.norm(value) * np.sqrt(self._eig_mask.mean()))
        mean_tangent = field_mean(self.tangent).reshape(3, 3)
        return float(np.linalg.norm(np.linalg.solve(mean_tangent, value)))

    def apply_increment(self, increment: LoadIncrement):
        value = increment.vector
        if increment.kind is LoadKind.STRAIN:
            if self.bc.mode is not BoundaryMode.MEAN_STRAIN:
                raise ConfigError("mean strain increments need mean-strain control")
            self.eps = self.eps + QPField.uniform(self.grid, value)
            self.applied_strain = self.applied_strain + value
        elif increment.kind is LoadKind.STRESS:
            if self.bc.mode is not BoundaryMode.MEAN_STRESS:
                raise ConfigError("mean stress increments need mean-stress control")
            self.bc.target = self.bc.target + value
        else:
            if not self._eig_mask.any():
                raise ConfigError("eigenstrain increment on a cell without eigenstrain phases")
            data = self.eps_eig.data.copy()
            data[self._eig_mask] += value
            self.eps_eig = self.eps_eig.like(data)
        self._trial = None
        self.sigma, self.tangent = self._evaluate(self.eps)

    # NonlinearProblem interface

    def flux(self) -> QPField:
        if self.bc.mode is BoundaryMode.MEAN_STRESS:
            return self.sigma - QPField.uniform(self.grid, self.bc.target)
        return self.sigma

    def rhs(self) -> QPField:
        return assemble_rhs(self)

    def apply_system(self, d_eps: QPField) -> QPField:
        return apply_system(self, d_eps)

    def trial_flux(self, p: QPField) -> QPField:
        sigma, tangent = self._evaluate(self.eps + p)
        self._trial = (p, sigma, tangent)
        if self.bc.mode is BoundaryMode.MEAN_STRESS:
            return sigma - QPField.uniform(self.grid, self.bc.target)
        return sigma

    def accept(self, p: QPField):
        self.eps = self.eps + p
        if self._trial is not None and self._trial[0] is p:
            _, self.sigma, self.tangent = self._trial
        else:
            self.sigma, self.tangent = self._evaluate(self.eps)
        self._trial = None
        self._commit()

    def commit_current(self):
        self.sigma, self.tangent = self._evaluate(self.eps)
        self._commit()

    def state_norm(self) -> float:
        return self.eps.norm()

    def snapshot(self) -> QPField:
        return self.eps.copy()

    # derived fields

    def fluctuation(self) -> QPField:
        return self.eps - QPField.uniform(self.grid, field_mean(self.eps))

    def damage_field(self) -> QPField:
        """Committed damage D per quadrature point, zero in undamageable phases"""
        d = np.zeros(self.grid.n_qp)
        for group in self._groups.values():
            if group.state is not None:
                d[group.index] = group.material.damage(group.state.kappa_committed)
        return QPField(self.grid, 0, d.reshape(self.grid.ny, self.grid.nx, self.grid.nq, 1))

    def kappa_field(self) -> QPField:
        kappa = np.zeros(self.grid.n_qp)
        for group in self._groups.values():
            if group.state is not None:
                kappa[group.index] = group.state.kappa_committed
        return QPField(self.grid, 0, kappa.reshape(self.grid.ny, self.grid.nx, self.grid.nq, 1))

    def secant_tangent(self) -> QPField:
        return self._evaluate(self.eps, secant=True)[1]

    def strain_projection(self):
        if self.projection.zero_freq_mode is ZeroFrequencyMode.STRAIN_CONTROL:
            return self.projection
        if self._strain_projection is None:
            self._strain_projection = build_projection(self.derivative, ZeroFrequencyMode.STRAIN_CONTROL)
        return self._strain_projection


def assemble_rhs(cell: Cell) -> QPField:
    """b = -G:sigma; under mean-stress control the zero-frequency block carries sigma_target - mean(sigma)"""
    return -apply_projection(cell.projection, cell.flux())


def apply_system(cell: Cell, d_eps: QPField) -> QPField:
    """G:(B:d_eps) with the tangent of the current state"""
    return apply_projection(cell.projection, apply_rank4(cell.tangent, d_eps))


@dataclass
class EffectiveStiffness:
    matrix: np.ndarray
    cg_iterations: int = 0
    fallback_radius: Optional[float] = None

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix))


def effective_stiffness(cell: Cell, krylov: Optional[KrylovConfig] = None) -> EffectiveStiffness:
    """Homogenized Mandel stiffness from three unit mean-strain probes on the
    committed secant tangent"""
    krylov = krylov or KrylovConfig(eta_cg=1e-10)
    tangent = cell.secant_tangent()
    projection = cell.strain_projection()
    system = lambda v: apply_projection(projection, apply_rank4(tangent, v))

    matrix = np.zeros((3, 3))
    iterations = 0
    fallback = None
    for k in range(3):
        probe = QPField.uniform(cell.grid, np.eye(3)[k])
        b = -apply_projection(projection, apply_rank4(tangent, probe))
        result = cg_steihaug(system, b, np.inf, krylov)
        if result.termination is Termination.NEGATIVE_CURVATURE:
            fallback = 10.0 * np.sqrt(cell.n_unknowns)
            logger.warning("indefinite frozen tangent in stiffness probe %d, retrying with radius %.3e", k, fallback)
            result = cg_steihaug(system, b, fallback, krylov)
        elif result.termination is Termination.MAX_ITER:
            raise KrylovError(f"stiffness probe {k} did not converge in {result.iterations} iterations")
        iterations += result.iterations
        matrix[:, k] = field_mean(apply_rank4(tangent, probe + result.p))
    return EffectiveStiffness(matrix, iterations, fallback)


@dataclass
class DegradationCurve:
    rows: List[Dict[str, Any]] = field(default_factory=list)
    reference_norm: float = float("nan")
    status: str = "converged"
    report: Optional[ConvergenceReport] = None

    COLUMNS = ["step", "sum_eigenstrain", "stiffness_ratio", "damaged_qp_count", "newton_iters", "cg_iters"]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=self.COLUMNS)

    @property
    def ratios(self) -> np.ndarray:
        return np.array([row["stiffness_ratio"] for row in self.rows])


def run_damage_study(
    cell: Cell,
    ramp: LoadProgram,
    cfg: Optional[TrustRegionConfig] = None,
    krylov: Optional[KrylovConfig] = None,
    on_step: Optional[Callable[[int, Cell], None]] = None,
    record_trace: bool = False,
) -> DegradationCurve:
    """Eigenstrain ramp under the cell's boundary condition, one stiffness
    evaluation per converged increment; stops at the first failed increment
    and records a solver error as the curve status"""
    cfg = (cfg or TrustRegionConfig()).resolved(cell.n_unknowns, cell.increment_scale(ramp.increments[0]))
    driver = NewtonDriver(SolverMethod.MODIFIED_TR, cfg, krylov, record_trace=record_trace)

    reference = effective_stiffness(cell).norm
    curve = DegradationCurve(reference_norm=reference, report=driver.report)
    curve.rows.append({"step": 0, "sum_eigenstrain": 0.0, "stiffness_ratio": 1.0,
                       "damaged_qp_count": 0, "newton_iters": 0, "cg_iters": 0})
    cumulative = ramp.cumulative(LoadKind.EIGENSTRAIN)

    for index, increment in enumerate(ramp, start=1):
        cell.apply_increment(increment)
        try:
            step = driver.solve_step(cell, index)
        except (KrylovError, OperatorInconsistencyError) as exc:
            curve.status = exc.kind
            driver.report.status = exc.kind
            logger.error("damage study stopped at increment %d: %s", index, exc)
            break
        if not step.converged:
            curve.status = step.status
            logger.warning("damage study stopped at increment %d: %s", index, step.status)
            break
        stiffness = effective_stiffness(cell)
        damage = cell.damage_field().data
        curve.rows.append({
            "step": index,
            # eigenstrain is equibiaxial; report the normal component
            "sum_eigenstrain": float(cumulative[index - 1, 0]),
            "stiffness_ratio": stiffness.norm / reference,
            "damaged_qp_count": int(np.count_nonzero(damage > 0.0)),
            "newton_iters": step.newton_iters,
            "cg_iters": step.cg_iters_total,
        })
        logger.info("increment %d: stiffness ratio %.6f, %d damaged points",
                    index, curve.rows[-1]["stiffness_ratio"], curve.rows[-1]["damaged_qp_count"])
        if on_step is not None:
            on_step(index, cell)
    return curve
