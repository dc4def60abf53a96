import math

import numpy as np
import pytest
from scipy.integrate import fixed_quad

from utils.exceptions import ConfigError, OperatorInconsistencyError, SolverDivergence
from utils.grid_fields import GridShape, QPField
from utils.materials import BilinearDamage, DamageState, evaluate
from utils.solver import (
    ConvergenceReport,
    LoadStepReport,
    NewtonDriver,
    ResidualMode,
    SolverMethod,
    TrustRegionConfig,
    faief_delta,
    model_decrease,
    residual_norm,
    update_radius,
)

CFG = TrustRegionConfig(R0=1.0, Rmax=4.0)


@pytest.mark.parametrize("rho,R,step,expected", [
    (0.1, 1.0, 1.0, 0.25),
    (-3.0, 1.0, 0.2, 0.25),
    (0.9, 1.0, 1.0, 2.0),
    (0.9, 1.0, 0.5, 1.0),
    (0.5, 1.0, 1.0, 1.0),
    (0.9, 3.0, 3.0, 4.0),
])
def test_update_radius(rho, R, step, expected):
    assert update_radius(rho, R, step, CFG) == pytest.approx(expected)


def test_radius_sequence_stays_positive_and_capped():
    R = 1.0
    for rho in (0.9, 0.9, 0.9, 0.1, 0.9, 0.0, 0.9, 0.9, 0.9):
        R = update_radius(rho, R, R, CFG)
        assert 0.0 < R <= CFG.Rmax


@pytest.mark.parametrize("kwargs", [
    {"eta_up": 0.3},
    {"R0": 2.0, "Rmax": 1.0},
    {"R0": -1.0},
    {"eta_eq": 0.0},
    {"max_newton": 0},
])
def test_invalid_trust_region_config(kwargs):
    with pytest.raises(ConfigError):
        TrustRegionConfig(**kwargs)


def test_default_radius_from_increment():
    cfg = TrustRegionConfig().resolved(n_unknowns=400, increment_norm=0.01)
    assert cfg.R0 == pytest.approx(0.1 * 20 * 0.01)
    assert cfg.Rmax == pytest.approx(100 * cfg.R0)
    with pytest.raises(ConfigError):
        TrustRegionConfig().resolved(400, 0.0)


def test_faief_is_exact_for_quadratic_energy(rng):
    A = rng.standard_normal((3, 3))
    A = A @ A.T + np.eye(3)
    f = rng.standard_normal(3)

    def energy(x):
        return 0.5 * x @ A @ x - f @ x

    x, p = rng.standard_normal(3), rng.standard_normal(3)
    exact = energy(x + p) - energy(x)
    assert faief_delta(A @ x - f, A @ (x + p) - f, p) == pytest.approx(exact, rel=1e-12)


def test_faief_error_is_third_order():
    """Trapezoid error along a damaging strain path shrinks eightfold per halving"""
    law = BilinearDamage(E0=1.0, nu=0.2, kappa0=1.0, alpha=-0.5)
    eps0 = np.array([1.5, 0.5, 0.0])
    # transverse to eps0: along radial paths the softening power is linear
    direction = np.array([0.0, 1.0, 0.0])

    def stress(eps):
        return evaluate(law, np.atleast_2d(eps), DamageState.fresh(1))[0][0]

    def power(s):
        return np.array([stress(eps0 + si * direction) @ direction for si in np.atleast_1d(s)])

    errors = []
    for t in (0.04, 0.02, 0.01):
        exact, _ = fixed_quad(power, 0.0, t, n=20)
        approx = faief_delta(stress(eps0), stress(eps0 + t * direction), t * direction)
        errors.append(abs(approx - exact))
    for coarse, fine in zip(errors, errors[1:]):
        assert 7.0 <= coarse / fine <= 9.0


def test_model_decrease():
    B = np.diag([2.0, 1.0])
    sigma = np.array([-1.0, -1.0])
    p = np.array([0.5, 1.0])
    assert model_decrease(sigma, lambda v: B @ v, p) == pytest.approx(1.5 - 0.5 * 1.5)


def test_negative_model_decrease_is_an_operator_error():
    with pytest.raises(OperatorInconsistencyError):
        model_decrease(np.array([1.0, 0.0]), lambda v: v, np.array([1.0, 0.0]))


def test_residual_norm_modes():
    b = np.full(4, 2.0)
    assert residual_norm(b, ResidualMode.ABSOLUTE) == pytest.approx(4.0)
    assert residual_norm(b, ResidualMode.SCALED) == pytest.approx(2.0)
    assert residual_norm(b, ResidualMode.RELATIVE, 8.0) == pytest.approx(0.5)


@pytest.mark.parametrize("grid", [GridShape(4, 2, nq=2), GridShape(16, 16, lx=0.05, ly=0.05)])
def test_scaled_residual_is_weighted_rms(grid):
    # pointwise norm 5 everywhere, whatever the raster or the cell size
    b = QPField.uniform(grid, (3.0, 4.0, 0.0))
    assert residual_norm(b, ResidualMode.SCALED) == pytest.approx(5.0)
    assert residual_norm(b, ResidualMode.RELATIVE, b.norm()) == pytest.approx(1.0)


def test_report_check_raises_with_report():
    report = ConvergenceReport(method="modified_tr", status="stagnated",
                               load_steps=[LoadStepReport(index=0, status="stagnated", newton_iters=3)])
    with pytest.raises(SolverDivergence) as info:
        report.check()
    assert info.value.report is report
    data = report.to_dict()
    assert data["total_newton_iters"] == 3
    assert data["load_steps"][0]["converged"] is False


def test_standard_trust_region_needs_energy():
    with pytest.raises(ConfigError):
        NewtonDriver(SolverMethod.STANDARD_TR, TrustRegionConfig(R0=1.0))
    with pytest.raises(ConfigError):
        NewtonDriver(SolverMethod.MODIFIED_TR, TrustRegionConfig())


class QuadraticProblem:
    """Minimal NonlinearProblem: W(x) = 1/2 x.A.x - f.x"""

    def __init__(self, A, f):
        self.A, self.f = A, f
        self.x = np.zeros(len(f))

    def flux(self):
        return self.A @ self.x - self.f

    def rhs(self):
        return -self.flux()

    def apply_system(self, v):
        return self.A @ v

    def trial_flux(self, p):
        return self.A @ (self.x + p) - self.f

    def accept(self, p):
        self.x = self.x + p

    def commit_current(self):
        pass

    def state_norm(self):
        return float(np.linalg.norm(self.x))

    def snapshot(self):
        return self.x.copy()


def test_trust_region_expands_until_interior_step(rng):
    A = np.diag([1.0, 2.0, 3.0])
    f = np.array([1.0, 1.0, 1.0])
    problem = QuadraticProblem(A, f)
    cfg = TrustRegionConfig(R0=0.1, Rmax=10.0, eta_eq=1e-12, residual_mode="absolute")
    driver = NewtonDriver(SolverMethod.MODIFIED_TR, cfg, record_trace=True)
    step = driver.solve_step(problem)
    assert step.converged
    np.testing.assert_allclose(problem.x, np.linalg.solve(A, f), atol=1e-10)
    assert step.rejections == 0
    # every boundary step is accepted with ratio one and doubles the radius
    assert step.radius_history[:3] == pytest.approx([0.2, 0.4, 0.8])
    assert all(row["accepted"] for row in driver.report.trace)


def test_newton_cg_reports_indefinite_tangent():
    problem = QuadraticProblem(np.diag([1.0, -1.0]), np.array([0.0, 1.0]))
    driver = NewtonDriver(SolverMethod.NEWTON_CG, TrustRegionConfig())
    step = driver.solve_step(problem)
    assert step.status == "indefinite"
    assert driver.report.status == "indefinite"


def test_stagnation_guard():
    class Hostile(QuadraticProblem):
        def trial_flux(self, p):
            # energy always rises along the step
            return -10.0 * self.flux()

    problem = Hostile(np.eye(2), np.array([1.0, 0.0]))
    cfg = TrustRegionConfig(R0=1.0, stagnation_limit=5, max_newton=50)
    step = NewtonDriver(SolverMethod.MODIFIED_TR, cfg).solve_step(problem)
    assert step.status == "stagnated"
    assert step.rejections == 5
    # rejected steps never move the state
    np.testing.assert_array_equal(problem.x, 0.0)
    assert step.rejections == 5
    assert step.radius_history[-1] == pytest.approx(0.25 ** 5)
    assert not math.isnan(step.final_residual)
