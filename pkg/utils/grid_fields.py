"""
Tensor fields on the quadrature points of a regular periodic 2D grid.

Symmetric rank-2 tensors are stored in Mandel form (e11, e22, sqrt(2) e12) so
that tensor contractions reduce to plain vector algebra; rank-4 tensors are
the matching 3x3 Mandel matrices flattened to 9 components. Arrays are laid
out pixel-major as (ny, nx, nq, ncomp).
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict

import numpy as np

from utils.exceptions import GridError

logger = logging.getLogger(__name__)

SQRT2 = np.sqrt(2.0)
RANK_COMPONENTS = {0: 1, 2: 3, 4: 9}


@dataclass(frozen=True)
class GridShape:
    """Pixel counts, cell edge lengths and quadrature points per pixel"""

    nx: int
    ny: int
    lx: float = 1.0
    ly: float = 1.0
    nq: int = 1
    dim: int = field(default=2, init=False)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise GridError(f"grid needs at least 2 pixels per direction, got {self.nx}x{self.ny}")
        if not (self.lx > 0 and self.ly > 0):
            raise GridError(f"cell edge lengths must be positive, got {self.lx}, {self.ly}")
        if self.nq < 1:
            raise GridError(f"need at least one quadrature point per pixel, got {self.nq}")

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    @property
    def h(self) -> float:
        """Pixel size used for crack-band regularization"""
        return self.hx

    @property
    def n_pixels(self) -> int:
        return self.nx * self.ny

    @property
    def n_qp(self) -> int:
        return self.nx * self.ny * self.nq

    @property
    def volume(self) -> float:
        return self.lx * self.ly

    @property
    def qp_weight(self) -> float:
        """Area carried by one quadrature point (uniform weights)"""
        return self.volume / self.n_qp

    def with_nq(self, nq: int) -> "GridShape":
        return GridShape(self.nx, self.ny, self.lx, self.ly, nq)

    def pixel_centers(self):
        """Physical coordinates (x, y) of pixel centers, each shaped (ny, nx)"""
        x = (np.arange(self.nx) + 0.5) * self.hx
        y = (np.arange(self.ny) + 0.5) * self.hy
        return np.meshgrid(x, y)

    def to_dict(self) -> Dict[str, Any]:
        return {"nx": self.nx, "ny": self.ny, "lx": self.lx, "ly": self.ly, "nq": self.nq}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GridShape":
        return cls(int(data["nx"]), int(data["ny"]), float(data["lx"]), float(data["ly"]), int(data.get("nq", 1)))


class QPField:
    """Tensor-valued field over the quadrature points of a grid"""

    def __init__(self, shape: GridShape, rank: int, data: np.ndarray = None):
        if rank not in RANK_COMPONENTS:
            raise GridError(f"unsupported tensor rank {rank}")
        expected = (shape.ny, shape.nx, shape.nq, RANK_COMPONENTS[rank])
        if data is None:
            data = np.zeros(expected)
        data = np.asarray(data, dtype=float)
        if data.shape != expected:
            raise GridError(f"field data shaped {data.shape}, expected {expected}")
        self.shape = shape
        self.rank = rank
        self.data = data

    @classmethod
    def zeros(cls, shape: GridShape, rank: int = 2) -> "QPField":
        return cls(shape, rank)

    @classmethod
    def uniform(cls, shape: GridShape, value) -> "QPField":
        """Field equal to one Mandel vector (rank 2) or matrix (rank 4) everywhere"""
        value = np.asarray(value, dtype=float)
        rank = {1: 0, 3: 2, 9: 4}.get(value.size)
        if rank is None:
            raise GridError(f"cannot infer tensor rank from {value.size} components")
        data = np.broadcast_to(value.ravel(), (shape.ny, shape.nx, shape.nq, value.size)).copy()
        return cls(shape, rank, data)

    @property
    def ncomp(self) -> int:
        return RANK_COMPONENTS[self.rank]

    def copy(self) -> "QPField":
        return QPField(self.shape, self.rank, self.data.copy())

    def like(self, data: np.ndarray) -> "QPField":
        return QPField(self.shape, self.rank, data)

    def norm(self) -> float:
        """Euclidean norm of all stacked Mandel components"""
        return float(np.linalg.norm(self.data.ravel()))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def _check_compatible(self, other: "QPField"):
        if self.shape != other.shape or self.rank != other.rank:
            raise GridError(
                f"field mismatch: {self.shape}/rank {self.rank} vs {other.shape}/rank {other.rank}"
            )

    def __add__(self, other: "QPField") -> "QPField":
        self._check_compatible(other)
        return self.like(self.data + other.data)

    def __sub__(self, other: "QPField") -> "QPField":
        self._check_compatible(other)
        return self.like(self.data - other.data)

    def __mul__(self, scalar: float) -> "QPField":
        return self.like(self.data * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "QPField":
        return self.like(-self.data)

    def __repr__(self) -> str:
        return f"QPField(rank={self.rank}, grid={self.shape.nx}x{self.shape.ny}x{self.shape.nq})"


def _require_finite(f: QPField, what: str):
    if not f.is_finite():
        raise GridError(f"{what} contains non-finite values")


def field_mean(f: QPField) -> np.ndarray:
    """Quadrature-weighted average of a field (weights are uniform)"""
    _require_finite(f, "field")
    return f.data.reshape(-1, f.ncomp).mean(axis=0)


def field_inner(a: QPField, b: QPField) -> float:
    """Weighted sum over quadrature points of the componentwise product"""
    a._check_compatible(b)
    return float(np.dot(a.data.ravel(), b.data.ravel()) * a.shape.qp_weight)


# Mandel conversions

def tensor_to_mandel(t: np.ndarray) -> np.ndarray:
    """Symmetric (..., 2, 2) tensors to (..., 3) Mandel vectors"""
    t = np.asarray(t, dtype=float)
    return np.stack([t[..., 0, 0], t[..., 1, 1], SQRT2 * 0.5 * (t[..., 0, 1] + t[..., 1, 0])], axis=-1)


def mandel_to_tensor(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    shear = v[..., 2] / SQRT2
    return np.stack([np.stack([v[..., 0], shear], axis=-1), np.stack([shear, v[..., 1]], axis=-1)], axis=-2)


def stiffness_to_mandel(c4: np.ndarray) -> np.ndarray:
    """Rank-4 tensor with minor symmetries (2, 2, 2, 2) to its 3x3 Mandel matrix"""
    pairs = [(0, 0), (1, 1), (0, 1)]
    scale = np.array([1.0, 1.0, SQRT2])
    out = np.empty((3, 3))
    for a, (i, j) in enumerate(pairs):
        for b, (k, l) in enumerate(pairs):
            out[a, b] = scale[a] * scale[b] * c4[i, j, k, l]
    return out


def apply_rank4(b: QPField, eps: QPField) -> QPField:
    """Per quadrature point Mandel matrix-vector product B:eps"""
    if b.rank != 4 or eps.rank != 2 or b.shape != eps.shape:
        raise GridError("apply_rank4 needs a rank-4 and a rank-2 field on the same grid")
    mats = b.data.reshape(*b.data.shape[:3], 3, 3)
    return eps.like(np.einsum("yxqij,yxqj->yxqi", mats, eps.data))
