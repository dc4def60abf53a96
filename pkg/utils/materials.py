"""
Constitutive laws evaluated at quadrature points, vectorized over arrays of
Mandel strains shaped (n, 3).

The damage law is the bilinear, tension-only isotropic damage model: the
history variable kappa is the largest Frobenius norm of the tensile part of
strain seen so far, and the secant stiffness is (1 - D) C. The tensile part is
obtained with a masking matrix M built from the Heaviside of the strain
eigenvalues, eps_t = M eps M, so the consistent tangent never differentiates
eigenvectors.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from config import Config
from utils.exceptions import MaterialError
from utils.grid_fields import mandel_to_tensor, tensor_to_mandel

logger = logging.getLogger(__name__)


def plane_strain_stiffness(E: float, nu: float) -> np.ndarray:
    """3x3 Mandel stiffness of an isotropic material in plane strain"""
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return np.array([
        [lam + 2.0 * mu, lam, 0.0],
        [lam, lam + 2.0 * mu, 0.0],
        [0.0, 0.0, 2.0 * mu],
    ])


def _check_elastic(E: float, nu: float):
    if not E > 0:
        raise MaterialError(f"Young modulus must be positive, got {E}")
    if not -1.0 < nu < 0.5:
        raise MaterialError(f"Poisson ratio must lie in (-1, 0.5), got {nu}")


def _check_strain(eps: np.ndarray) -> np.ndarray:
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] != 3:
        raise MaterialError(f"expected Mandel strains with 3 components, got shape {eps.shape}")
    if not np.all(np.isfinite(eps)):
        raise MaterialError("non-finite strain passed to constitutive evaluation")
    return eps


@dataclass(frozen=True)
class LinearElastic:
    E: float
    nu: float

    def __post_init__(self):
        _check_elastic(self.E, self.nu)

    @property
    def stiffness(self) -> np.ndarray:
        return plane_strain_stiffness(self.E, self.nu)

    def evaluate(self, eps: np.ndarray, state=None) -> Tuple[np.ndarray, np.ndarray]:
        eps = _check_strain(eps)
        C = self.stiffness
        sigma = eps @ C.T
        tangent = np.broadcast_to(C, eps.shape[:-1] + (3, 3)).copy()
        return sigma, tangent


@dataclass
class DamageState:
    """Per quadrature point history: committed kappa and the shadow trial kappa"""

    kappa_committed: np.ndarray
    kappa_trial: Optional[np.ndarray] = None
    damage_trial: Optional[np.ndarray] = None

    @classmethod
    def fresh(cls, n: int) -> "DamageState":
        return cls(np.zeros(n))

    def copy(self) -> "DamageState":
        return DamageState(
            self.kappa_committed.copy(),
            None if self.kappa_trial is None else self.kappa_trial.copy(),
            None if self.damage_trial is None else self.damage_trial.copy(),
        )


@dataclass(frozen=True)
class BilinearDamage:
    """Bilinear crack-band damage; alpha is the signed post-peak slope relative to E0"""

    E0: float
    nu: float
    kappa0: float
    alpha: float
    Gc: Optional[float] = None
    ft0: Optional[float] = None
    ceiling: float = field(default=Config.DAMAGE_CEILING)

    def __post_init__(self):
        _check_elastic(self.E0, self.nu)
        if not self.kappa0 > 0:
            raise MaterialError(f"damage threshold must be positive, got {self.kappa0}")
        if not np.isfinite(self.alpha):
            raise MaterialError("softening slope must be finite")

    @classmethod
    def regularized(cls, E0: float, nu: float, ft0: float, Gc: float, h: float) -> "BilinearDamage":
        """Damage law whose softening dissipates Gc per unit crack length on elements of size h"""
        alpha = regularize_softening(Gc, ft0, E0, h)
        return cls(E0=E0, nu=nu, kappa0=ft0 / E0, alpha=alpha, Gc=Gc, ft0=ft0)

    @property
    def stiffness(self) -> np.ndarray:
        return plane_strain_stiffness(self.E0, self.nu)

    @property
    def kappa_ultimate(self) -> float:
        """Measure where the softening branch reaches zero stress (inf without softening)"""
        if self.alpha >= 0:
            return np.inf
        return self.kappa0 * (self.alpha - 1.0) / self.alpha

    def damage(self, kappa: np.ndarray) -> np.ndarray:
        kappa = np.asarray(kappa, dtype=float)
        safe = np.where(kappa > self.kappa0, kappa, 1.0)
        # alpha is the signed softening-to-elastic slope ratio (negative when softening):
        # (1 - D) E0 kappa = E0 (kappa0 + alpha (kappa - kappa0)) on the loading branch
        d = (safe - self.kappa0) * (1.0 - self.alpha) / safe
        d = np.where(kappa > self.kappa0, d, 0.0)
        return np.clip(d, 0.0, self.ceiling)

    def damage_rate(self, kappa: np.ndarray) -> np.ndarray:
        """dD/dkappa, zero where D is below threshold or at the ceiling"""
        kappa = np.asarray(kappa, dtype=float)
        safe = np.where(kappa > self.kappa0, kappa, 1.0)
        rate = (1.0 - self.alpha) * self.kappa0 / safe ** 2
        d = self.damage(kappa)
        active = (kappa > self.kappa0) & (d > 0.0) & (d < self.ceiling)
        return np.where(active, rate, 0.0)

    def softening_curve(self, kappa: np.ndarray) -> np.ndarray:
        """Scalar stress (1 - D) E0 kappa along monotonic loading"""
        kappa = np.asarray(kappa, dtype=float)
        return (1.0 - self.damage(kappa)) * self.E0 * kappa

    def evaluate(self, eps: np.ndarray, state: DamageState) -> Tuple[np.ndarray, np.ndarray]:
        return evaluate(self, eps, state)


Material = Union[LinearElastic, BilinearDamage]


def damage_measure(eps: np.ndarray, return_tensile: bool = False):
    """kappa = ||M eps M|| with the masking matrix M = sum_i H(eps_i) q_i (x) q_i"""
    eps = _check_strain(eps)
    tensor = mandel_to_tensor(eps)
    values, vectors = np.linalg.eigh(tensor)
    heaviside = (values > 0.0).astype(float)
    mask = np.einsum("...ik,...k,...jk->...ij", vectors, heaviside, vectors)
    tensile = mask @ tensor @ mask
    kappa = np.sqrt(np.sum(tensile ** 2, axis=(-2, -1)))
    if return_tensile:
        return kappa, tensor_to_mandel(tensile)
    return kappa


def evaluate(material: Material, eps_eval: np.ndarray, state: Optional[DamageState] = None):
    """Stress and consistent tangent; damage laws update only the trial history"""
    if isinstance(material, LinearElastic):
        return material.evaluate(eps_eval)

    eps = _check_strain(eps_eval)
    if state is None or state.kappa_committed.shape != eps.shape[:-1]:
        raise MaterialError("damage evaluation needs a history state matching the strain array")

    kappa_eps, tensile = damage_measure(eps, return_tensile=True)
    kappa_trial = np.maximum(state.kappa_committed, kappa_eps)
    # a freshly committed point sits on the loading branch
    loading = (kappa_eps >= state.kappa_committed) & (kappa_eps > material.kappa0)

    d = material.damage(kappa_trial)
    C = material.stiffness
    c_eps = eps @ C.T
    sigma = (1.0 - d)[..., None] * c_eps
    tangent = (1.0 - d)[..., None, None] * C

    rate = np.where(loading, material.damage_rate(kappa_trial), 0.0)
    if np.any(rate):
        safe_kappa = np.where(loading, kappa_eps, 1.0)
        dkappa = tensile / safe_kappa[..., None]
        tangent = tangent - np.einsum("...i,...j->...ij", c_eps, rate[..., None] * dkappa)

    state.kappa_trial = kappa_trial
    state.damage_trial = d
    return sigma, tangent


def regularize_softening(Gc: float, ft0: float, E0: float, h: float) -> float:
    """Softening slope alpha preserving the fracture energy Gc on elements of size h"""
    for name, value in (("Gc", Gc), ("ft0", ft0), ("E0", E0), ("h", h)):
        if not value > 0:
            raise MaterialError(f"{name} must be positive, got {value}")
    h_max = 2.0 * Gc * E0 / ft0 ** 2
    if h > h_max:
        raise MaterialError(f"element size {h:.3e} exceeds {h_max:.3e}: softening snaps back, refine the grid")
    kappa0 = ft0 / E0
    kappa_u = kappa0 + 2.0 * Gc / (ft0 * h)
    return -kappa0 / (kappa_u - kappa0)


def commit_state(state: DamageState):
    """Advance the committed history to the last trial evaluation"""
    if state.kappa_trial is None:
        return
    state.kappa_committed = np.maximum(state.kappa_committed, state.kappa_trial)
    state.kappa_trial = None
    state.damage_trial = None
