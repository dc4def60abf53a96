"""
Random meso-scale concrete microstructures: elliptical aggregates with a
Fuller grading in cement paste, and square gel pockets inside aggregates.

Geometry lives in physical coordinates. Placement runs on a fixed reference
raster and the result is rasterized onto the requested grid afterwards, so two
resolutions generated from the same seed describe the same microstructure.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from utils.exceptions import MicrostructureError
from utils.grid_fields import GridShape

logger = logging.getLogger(__name__)

PASTE = 0
AGGREGATE = 1
GEL = 2


@dataclass(frozen=True)
class FullerParams:
    """Grading of the aggregates: sieve diameters between d_min and d_max
    (fractions of the cell width) with passing fraction (d/d_max)^exponent"""

    d_min: float = 0.04
    d_max: float = 0.2
    exponent: float = 0.5
    aspect_range: Tuple[float, float] = (1.0, 2.0)
    gap: float = 0.005
    max_attempts: int = 20000
    reference_resolution: int = 512
    fraction_tolerance: float = 0.01

    def __post_init__(self):
        if not 0 < self.d_min <= self.d_max:
            raise MicrostructureError(f"need 0 < d_min <= d_max, got {self.d_min}, {self.d_max}")
        if not self.exponent > 0:
            raise MicrostructureError(f"Fuller exponent must be positive, got {self.exponent}")
        lo, hi = self.aspect_range
        if not 1.0 <= lo <= hi:
            raise MicrostructureError(f"aspect range must satisfy 1 <= lo <= hi, got {self.aspect_range}")
        if self.d_max * hi > 0.5:
            raise MicrostructureError("largest aggregate exceeds half the cell; periodic images would overlap")
        if self.max_attempts < 1 or self.reference_resolution < 16:
            raise MicrostructureError("max_attempts must be positive and the reference raster at least 16")

    def sample_diameters(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Inverse-transform samples of the Fuller grading"""
        q = self.exponent
        ratio = (self.d_min / self.d_max) ** q
        u = rng.random(n)
        return self.d_max * (ratio + u * (1.0 - ratio)) ** (1.0 / q)


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    a: float
    b: float
    theta: float

    @property
    def area(self) -> float:
        return math.pi * self.a * self.b

    def contains(self, x: np.ndarray, y: np.ndarray, lx: float, ly: float, grow: float = 0.0) -> np.ndarray:
        """Point-in-ellipse test under periodic minimum-image wrapping"""
        dx = (x - self.cx + 0.5 * lx) % lx - 0.5 * lx
        dy = (y - self.cy + 0.5 * ly) % ly - 0.5 * ly
        c, s = math.cos(self.theta), math.sin(self.theta)
        u = dx * c + dy * s
        v = -dx * s + dy * c
        return (u / (self.a + grow)) ** 2 + (v / (self.b + grow)) ** 2 <= 1.0


@dataclass
class Microstructure:
    phase: np.ndarray
    grid: GridShape
    seed: int
    ellipses: List[Ellipse] = field(default_factory=list)
    pockets: List[Tuple[int, int]] = field(default_factory=list)
    pocket_size: float = 0.0

    def fraction(self, phase_id: int) -> float:
        return float(np.mean(self.phase == phase_id))

    @property
    def aggregate_fraction(self) -> float:
        """Aggregate area including the gel pockets embedded in it"""
        return float(np.mean(self.phase != PASTE))


class _Raster:
    """Boolean occupancy on pixel centers of a periodic cell, updated per ellipse window"""

    def __init__(self, nx: int, ny: int, lx: float, ly: float):
        self.nx, self.ny, self.lx, self.ly = nx, ny, lx, ly
        self.hx, self.hy = lx / nx, ly / ny
        self.cells = np.zeros((ny, nx), dtype=bool)

    def window(self, e: Ellipse, grow: float = 0.0):
        reach = e.a + grow
        rx = int(math.ceil(reach / self.hx)) + 1
        ry = int(math.ceil(reach / self.hy)) + 1
        ix0 = int(math.floor(e.cx / self.hx))
        iy0 = int(math.floor(e.cy / self.hy))
        ix = np.arange(ix0 - rx, ix0 + rx + 1)
        iy = np.arange(iy0 - ry, iy0 + ry + 1)
        # a window wider than the cell would visit pixels twice
        ix = np.unique(ix % self.nx)
        iy = np.unique(iy % self.ny)
        x = (ix + 0.5) * self.hx
        y = (iy + 0.5) * self.hy
        inside = e.contains(x[None, :], y[:, None], self.lx, self.ly, grow)
        return np.ix_(iy, ix), inside

    def overlaps(self, e: Ellipse, gap: float) -> bool:
        idx, inside = self.window(e, gap)
        return bool(np.any(self.cells[idx] & inside))

    def add(self, e: Ellipse) -> int:
        idx, inside = self.window(e)
        before = int(np.count_nonzero(self.cells[idx]))
        self.cells[idx] |= inside
        return int(np.count_nonzero(self.cells[idx])) - before


def _place_aggregates(grid: GridShape, target: float, fuller: FullerParams,
                      rng: np.random.Generator) -> List[Ellipse]:
    lx, ly = grid.lx, grid.ly
    ref_nx = fuller.reference_resolution
    ref_ny = max(16, int(round(ref_nx * ly / lx)))
    raster = _Raster(ref_nx, ref_ny, lx, ly)
    total = ref_nx * ref_ny
    lo, hi = fuller.aspect_range
    gap = fuller.gap * lx

    # largest particles first, as a sieve would deliver them
    mean_area = math.pi * (0.5 * fuller.d_min * lx) ** 2
    n_batch = int(min(10000, max(16, math.ceil(target * grid.volume / mean_area))))
    queue = list(np.sort(fuller.sample_diameters(rng, n_batch))[::-1])

    ellipses: List[Ellipse] = []
    occupied = 0
    attempts = 0
    failures = 0
    while occupied / total < target and attempts < fuller.max_attempts:
        if not queue:
            queue = list(np.sort(fuller.sample_diameters(rng, 64))[::-1])
        d = queue[0] * lx
        attempts += 1
        aspect = rng.uniform(lo, hi)
        candidate = Ellipse(
            cx=rng.uniform(0.0, lx),
            cy=rng.uniform(0.0, ly),
            a=0.5 * d * aspect,
            b=0.5 * d,
            theta=rng.uniform(0.0, math.pi),
        )
        if raster.overlaps(candidate, gap):
            failures += 1
            # no room left for this size
            if failures >= 50:
                queue.pop(0)
                failures = 0
            continue
        idx, inside = raster.window(candidate)
        gain = int(np.count_nonzero(inside & ~raster.cells[idx]))
        if (occupied + gain) / total > target + fuller.fraction_tolerance:
            queue.pop(0)
            failures = 0
            continue
        occupied += raster.add(candidate)
        ellipses.append(candidate)
        queue.pop(0)
        failures = 0

    achieved = occupied / total
    if achieved < target - fuller.fraction_tolerance:
        raise MicrostructureError(
            f"aggregate fraction {target:.3f} not reached within {fuller.max_attempts} attempts",
            achieved_fraction=achieved,
        )
    logger.info("placed %d aggregates, reference fraction %.4f after %d attempts",
                len(ellipses), achieved, attempts)
    return ellipses


def _place_gel(grid: GridShape, ellipses: List[Ellipse], gel_fraction: float, pocket: float,
               rng: np.random.Generator) -> List[Tuple[int, int]]:
    lx, ly = grid.lx, grid.ly
    mx = int(round(lx / pocket))
    my = int(round(ly / pocket))
    n_pockets = int(round(gel_fraction * grid.volume / pocket ** 2))
    if n_pockets == 0:
        return []

    # the pocket grown by one pocket size on every side must sit inside one aggregate
    jj, ii = np.meshgrid(np.arange(my), np.arange(mx), indexing="ij")
    corners_x = np.stack([(ii - 1) * pocket, (ii + 2) * pocket, (ii - 1) * pocket, (ii + 2) * pocket])
    corners_y = np.stack([(jj - 1) * pocket, (jj - 1) * pocket, (jj + 2) * pocket, (jj + 2) * pocket])
    eligible = np.zeros((my, mx), dtype=bool)
    for e in ellipses:
        eligible |= np.all(e.contains(corners_x, corners_y, lx, ly), axis=0)

    candidates = np.flatnonzero(eligible.ravel())
    if candidates.size < n_pockets:
        raise MicrostructureError(
            f"only {candidates.size} gel sites available inside aggregates, {n_pockets} requested",
            achieved_fraction=candidates.size * pocket ** 2 / grid.volume,
        )
    chosen = np.sort(rng.choice(candidates, size=n_pockets, replace=False))
    return [(int(c % mx), int(c // mx)) for c in chosen]


def generate_microstructure(
    grid: GridShape,
    seed: int,
    aggregate_fraction: float,
    fuller: Optional[FullerParams] = None,
    gel_fraction: float = 0.0,
    gel_pocket_size: Optional[float] = None,
) -> Microstructure:
    """Phase map (0 paste, 1 aggregate, 2 gel) for a seed.

    Streams are split from one PCG64 seed sequence: child 0 drives aggregate
    placement and child 1 the gel pocket selection.
    """
    if not 0.0 < aggregate_fraction < 1.0:
        raise MicrostructureError(f"aggregate fraction must lie in (0, 1), got {aggregate_fraction}")
    if not 0.0 <= gel_fraction < aggregate_fraction:
        raise MicrostructureError(f"gel fraction must lie in [0, {aggregate_fraction}), got {gel_fraction}")
    fuller = fuller or FullerParams()
    pocket = gel_pocket_size if gel_pocket_size is not None else grid.lx / 32.0
    if not pocket > 0:
        raise MicrostructureError(f"gel pocket size must be positive, got {pocket}")
    ratio = pocket / grid.hx
    if abs(ratio - round(ratio)) > 1e-9 or ratio < 1:
        logger.warning("gel pocket size %.4g is not a multiple of the pixel size %.4g", pocket, grid.hx)

    agg_seq, gel_seq = np.random.SeedSequence(seed).spawn(2)
    ellipses = _place_aggregates(grid, aggregate_fraction, fuller, np.random.Generator(np.random.PCG64(agg_seq)))
    pockets = _place_gel(grid, ellipses, gel_fraction, pocket, np.random.Generator(np.random.PCG64(gel_seq)))

    x, y = grid.pixel_centers()
    phase = np.full((grid.ny, grid.nx), PASTE, dtype=np.int8)
    for e in ellipses:
        phase[e.contains(x, y, grid.lx, grid.ly)] = AGGREGATE
    for i, j in pockets:
        inside = (x >= i * pocket) & (x < (i + 1) * pocket) & (y >= j * pocket) & (y < (j + 1) * pocket)
        phase[inside] = GEL

    result = Microstructure(phase, grid, seed, ellipses, pockets, pocket)
    logger.info("microstructure seed %d on %dx%d: aggregate %.4f, gel %.4f",
                seed, grid.nx, grid.ny, result.aggregate_fraction, result.fraction(GEL))
    return result
