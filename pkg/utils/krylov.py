"""
Matrix-free trust-region subproblem solver.

cg_steihaug approximately minimizes m(p) = -b.p + 1/2 p.A.p inside the ball
||p|| <= R with conjugate gradients, leaving through the boundary on negative
curvature or when an iterate would exit the ball. Successive residuals that
lose orthogonality trigger a restart from the true residual.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from config import Config
from utils.exceptions import KrylovError
from utils.grid_fields import QPField

logger = logging.getLogger(__name__)


class Termination(str, Enum):
    CONVERGED = "converged"
    BOUNDARY_HIT = "boundary_hit"
    NEGATIVE_CURVATURE = "negative_curvature"
    MAX_ITER = "max_iter"


@dataclass
class KrylovConfig:
    """Subproblem tolerances; eta_cg is scaled by ||b|| when relative is set"""

    eta_cg: float = Config.CG_RELATIVE_TOLERANCE
    max_iter: Optional[int] = None
    reset_threshold: float = Config.CG_RESET_THRESHOLD
    relative: bool = True

    def __post_init__(self):
        if not self.eta_cg > 0:
            raise KrylovError(f"eta_cg must be positive, got {self.eta_cg}")
        if self.max_iter is not None and self.max_iter < 1:
            raise KrylovError(f"max_iter must be at least 1, got {self.max_iter}")
        # inf disables the orthogonality reset
        if not (0.1 < self.reset_threshold < 0.9 or math.isinf(self.reset_threshold)):
            raise KrylovError(f"reset_threshold must lie in (0.1, 0.9), got {self.reset_threshold}")

    def resolve_max_iter(self, n_unknowns: int) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return max(1, min(n_unknowns, int(10 * math.sqrt(n_unknowns))))

    def tolerance(self, b_norm: float) -> float:
        return self.eta_cg * b_norm if self.relative else self.eta_cg

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eta_cg": self.eta_cg,
            "max_iter": self.max_iter,
            "reset_threshold": self.reset_threshold,
            "relative": self.relative,
        }


@dataclass
class SubproblemResult:
    p: Any
    termination: Termination
    iterations: int
    resets: int = 0
    residual_norm: float = 0.0
    model_value: float = 0.0
    model_history: List[float] = field(default_factory=list)
    trace: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def on_boundary(self) -> bool:
        return self.termination in (Termination.BOUNDARY_HIT, Termination.NEGATIVE_CURVATURE)


def boundary_step(p: np.ndarray, d: np.ndarray, R: float) -> float:
    """Non-negative tau with ||p + tau d|| = R, using the cancellation-free root"""
    pp = float(np.vdot(p, p))
    pd = float(np.vdot(p, d))
    dd = float(np.vdot(d, d))
    if dd == 0.0:
        return 0.0
    gap = max(R * R - pp, 0.0)
    disc = math.sqrt(pd * pd + dd * gap)
    if pd >= 0.0:
        return gap / (pd + disc) if pd + disc > 0.0 else 0.0
    return (disc - pd) / dd


def _model(p: np.ndarray, g: np.ndarray, b: np.ndarray) -> float:
    # m(p) = 1/2 p.(A p - b) - 1/2 p.b with g = A p - b
    return 0.5 * float(np.vdot(p, g - b))


def cg_steihaug(
    apply_a: Callable,
    b,
    R: float,
    cfg: Optional[KrylovConfig] = None,
    record_trace: bool = False,
) -> SubproblemResult:
    """Steihaug conjugate gradients with orthogonality reset.

    ``b`` may be a numpy array or a QPField; ``apply_a`` takes and returns the
    same type. R = inf gives plain (unconstrained) CG, in which case negative
    curvature returns the current iterate.
    """
    cfg = cfg or KrylovConfig()
    if not R > 0:
        raise KrylovError(f"trust radius must be positive, got {R}")

    wrap = None
    if isinstance(b, QPField):
        template = b
        wrap = template.like
        operator = lambda x: apply_a(wrap(x)).data
        rhs = b.data
    else:
        operator = apply_a
        rhs = np.asarray(b, dtype=float)

    if not np.all(np.isfinite(rhs)):
        raise KrylovError("non-finite right-hand side")

    b_norm = float(np.linalg.norm(rhs.ravel()))
    tol = cfg.tolerance(b_norm)
    max_iter = cfg.resolve_max_iter(rhs.size)

    p = np.zeros_like(rhs)
    g = -rhs.copy()
    d = rhs.copy()
    resets = 0
    history = [0.0]
    trace = []

    def finish(termination: Termination, p_out, residual: float, iterations: int, model: float):
        if trace is not None and record_trace:
            trace.append({"iteration": iterations, "residual": residual, "resets": resets,
                          "model": model, "termination": termination.value})
        logger.debug("cg_steihaug %s after %d iterations, residual %.3e, %d resets",
                     termination.value, iterations, residual, resets)
        return SubproblemResult(
            p=wrap(p_out) if wrap else p_out,
            termination=termination,
            iterations=iterations,
            resets=resets,
            residual_norm=residual,
            model_value=model,
            model_history=history,
            trace=trace,
        )

    if b_norm == 0.0 or b_norm <= tol:
        return finish(Termination.CONVERGED, p, b_norm, 0, 0.0)

    gg = b_norm * b_norm
    for j in range(max_iter):
        ad = np.asarray(operator(d))
        if not np.all(np.isfinite(ad)):
            raise KrylovError(f"operator returned non-finite values at iteration {j}")
        dad = float(np.vdot(d, ad))

        if dad <= 0.0:
            if math.isinf(R):
                return finish(Termination.NEGATIVE_CURVATURE, p, math.sqrt(gg), j, _model(p, g, rhs))
            tau = boundary_step(p, d, R)
            p_b = p + tau * d
            g_b = g + tau * ad
            history.append(_model(p_b, g_b, rhs))
            return finish(Termination.NEGATIVE_CURVATURE, p_b, float(np.linalg.norm(g_b)), j + 1, history[-1])

        step = gg / dad
        p_next = p + step * d
        if float(np.linalg.norm(p_next.ravel())) >= R:
            tau = boundary_step(p, d, R)
            p_b = p + tau * d
            g_b = g + tau * ad
            history.append(_model(p_b, g_b, rhs))
            return finish(Termination.BOUNDARY_HIT, p_b, float(np.linalg.norm(g_b)), j + 1, history[-1])

        g_next = g + step * ad
        gg_next = float(np.vdot(g_next, g_next))
        history.append(_model(p_next, g_next, rhs))
        if history[-1] > history[-2] + 1e-12 * max(1.0, abs(history[-2])):
            logger.warning("cg_steihaug model increased at iteration %d: %.6e -> %.6e",
                           j, history[-2], history[-1])
        if record_trace:
            trace.append({"iteration": j + 1, "residual": math.sqrt(gg_next), "resets": resets,
                          "model": history[-1], "termination": ""})

        if math.sqrt(gg_next) <= tol:
            return finish(Termination.CONVERGED, p_next, math.sqrt(gg_next), j + 1, history[-1])

        if gg_next > 0.0 and abs(float(np.vdot(g_next, g))) / gg_next > cfg.reset_threshold:
            # successive residuals lost orthogonality: restart from the true residual
            g_next = np.asarray(operator(p_next)) - rhs
            gg_next = float(np.vdot(g_next, g_next))
            resets += 1
            beta = 0.0
            if math.sqrt(gg_next) <= tol:
                return finish(Termination.CONVERGED, p_next, math.sqrt(gg_next), j + 1, history[-1])
        else:
            beta = gg_next / gg

        d = -g_next + beta * d
        p, g, gg = p_next, g_next, gg_next

    logger.warning("cg_steihaug reached max_iter=%d with residual %.3e", max_iter, math.sqrt(gg))
    return finish(Termination.MAX_ITER, p, math.sqrt(gg), max_iter, _model(p, g, rhs))
