"""Spatial grids, probability maps over them, and derived position moments.

A grid is a fixed set of K candidate locations in D-dimensional space,
stored as the columns of a D x K matrix so that the expected location of a
probability map ``p`` is the single matrix-vector product ``G @ p``.
Probability maps are validated strictly at construction: a vector that does
not sum to one within tolerance is rejected rather than renormalized, since
silent renormalization tends to hide upstream bugs.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

PMF_TOL = 1e-9
HULL_SLACK = 1e-9


class GridMismatchError(ValueError):
    """A probability map or point does not match the grid it is used with."""


@dataclass(frozen=True)
class RectLattice:
    """Descriptor of a rectangular uniform grid: equispaced side_count x side_count
    points spanning [x_min, x_max] x [y_min, y_max]."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    side_count: int

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        xs = np.linspace(self.x_min, self.x_max, self.side_count)
        ys = np.linspace(self.y_min, self.y_max, self.side_count)
        return xs, ys


@dataclass(frozen=True)
class Grid:
    """A set of K grid points in D dimensions, one point per column.

    Parameters
    ----------
    points:
        Real (D, K) array of grid-point coordinates in meters, D in {2, 3}.
    lattice:
        Optional :class:`RectLattice` marking the grid as rectangular-uniform.
        When set, every column must lie exactly on the described lattice
        (points are stored in x-major order: column ``i*side + j`` is
        ``(xs[i], ys[j])``).
    """

    points: np.ndarray
    lattice: RectLattice | None = None
    grid_id: int = field(init=False)

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2:
            raise ValueError(f"grid points must be a D x K matrix, got shape {pts.shape}")
        d, k = pts.shape
        if d not in (2, 3):
            raise ValueError(f"grid dimensionality must be 2 or 3, got {d}")
        if k < 1:
            raise ValueError("grid must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if self.lattice is not None:
            lat = self.lattice
            if d != 2:
                raise ValueError("rectangular-uniform grids are two-dimensional")
            xs, ys = lat.axes()
            expect = np.empty((2, lat.side_count * lat.side_count))
            expect[0] = np.repeat(xs, lat.side_count)
            expect[1] = np.tile(ys, lat.side_count)
            if pts.shape != expect.shape or not np.array_equal(pts, expect):
                raise ValueError("points do not lie exactly on the declared lattice")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "grid_id", _content_id(pts, self.lattice))

    @property
    def dims(self) -> int:
        return self.points.shape[0]

    @property
    def count(self) -> int:
        return self.points.shape[1]


def _content_id(points: np.ndarray, lattice: RectLattice | None) -> int:
    crc = zlib.crc32(points.tobytes())
    if lattice is not None:
        crc = zlib.crc32(np.float64([lattice.x_min, lattice.x_max, lattice.y_min,
                                     lattice.y_max, lattice.side_count]).tobytes(), crc)
    return crc


def uniform_grid(x_min: float, x_max: float, y_min: float, y_max: float,
                 side_count: int) -> Grid:
    """Build a rectangular uniform grid of side_count x side_count points."""
    if side_count < 2:
        raise ValueError("side_count must be at least 2")
    lat = RectLattice(float(x_min), float(x_max), float(y_min), float(y_max),
                      int(side_count))
    xs, ys = lat.axes()
    pts = np.empty((2, side_count * side_count))
    pts[0] = np.repeat(xs, side_count)
    pts[1] = np.tile(ys, side_count)
    return Grid(pts, lattice=lat)


@dataclass(frozen=True)
class ProbabilityMap:
    """A probability mass function over the points of one grid.

    ``mass`` must be a length-K vector with entries in [0, 1] summing to one
    within ``PMF_TOL``; ``grid_id`` ties the map to the grid it indexes.
    """

    mass: np.ndarray
    grid_id: int

    def __post_init__(self):
        m = np.ascontiguousarray(np.asarray(self.mass, dtype=np.float64))
        if m.ndim != 1 or m.size < 1:
            raise ValueError("probability mass must be a nonempty vector")
        if not np.all(np.isfinite(m)):
            raise ValueError("probability mass must be finite")
        if np.any(m < 0.0) or np.any(m > 1.0):
            raise ValueError("probability mass entries must lie in [0, 1]")
        total = float(m.sum())
        if abs(total - 1.0) > PMF_TOL:
            raise ValueError(f"probability mass sums to {total!r}, expected 1 within {PMF_TOL}")
        m.flags.writeable = False
        object.__setattr__(self, "mass", m)

    @classmethod
    def for_grid(cls, mass, grid: Grid) -> "ProbabilityMap":
        return cls(np.asarray(mass, dtype=np.float64), grid.grid_id)


@dataclass(frozen=True)
class PositionEstimate:
    """A position summarized as a mean and a per-dimension variance."""

    mean: np.ndarray
    diag_cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        dcov = np.asarray(self.diag_cov, dtype=np.float64)
        if mean.shape != dcov.shape or mean.ndim != 1:
            raise ValueError("mean and diag_cov must be vectors of equal length")
        if np.any(dcov < 0.0):
            raise ValueError("diag_cov entries must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "diag_cov", dcov)


def _check_indexes(p: ProbabilityMap, g: Grid) -> None:
    if p.mass.size != g.count:
        raise GridMismatchError(
            f"probability map has {p.mass.size} entries but grid has {g.count} points")
    if p.grid_id != g.grid_id:
        raise GridMismatchError("probability map does not index this grid")


def expected_location(p: ProbabilityMap, g: Grid) -> np.ndarray:
    """Probability-weighted mean position ``G @ p`` of a map over its grid."""
    _check_indexes(p, g)
    return g.points @ p.mass


def covariance(p: ProbabilityMap, g: Grid) -> np.ndarray:
    """D x D covariance of the position under map ``p``.

    Returns ``sum_k p_k (g_k - mean)(g_k - mean)^T`` with the mean taken from
    :func:`expected_location`; the result is symmetric positive semidefinite.
    """
    _check_indexes(p, g)
    mean = g.points @ p.mass
    centered = g.points - mean[:, None]
    cov = (centered * p.mass[None, :]) @ centered.T
    return 0.5 * (cov + cov.T)


def in_hull(x, g: Grid, slack: float = HULL_SLACK) -> bool:
    """Whether ``x`` is a convex combination of the grid points.

    Rectangular-uniform grids use a bounding-box test; general grids solve a
    small feasibility problem (find weights on the simplex whose weighted sum
    of grid points matches ``x`` within ``slack`` per coordinate).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (g.dims,):
        raise GridMismatchError(f"point has shape {x.shape}, expected ({g.dims},)")
    if g.lattice is not None:
        lat = g.lattice
        return bool(lat.x_min - slack <= x[0] <= lat.x_max + slack
                    and lat.y_min - slack <= x[1] <= lat.y_max + slack)
    pts = g.points
    k = g.count
    # |G a - x| <= slack elementwise, sum(a) = 1, a >= 0
    a_ub = np.vstack([pts, -pts])
    b_ub = np.concatenate([x + slack, -(x - slack)])
    res = linprog(np.zeros(k), A_ub=a_ub, b_ub=b_ub,
                  A_eq=np.ones((1, k)), b_eq=[1.0], bounds=(0.0, 1.0),
                  method="highs")
    if res.status == 0:
        return True
    if res.status == 2:
        return False
    raise RuntimeError(f"hull feasibility solve failed: {res.message}")


def variance_vector(g: Grid, x) -> np.ndarray:
    """Squared distances from every grid point to ``x``.

    The inner product of this vector with a probability map equals the trace
    of the map's covariance when ``x`` is the map's mean location.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (g.dims,):
        raise GridMismatchError(f"point has shape {x.shape}, expected ({g.dims},)")
    diff = g.points - x[:, None]
    return np.einsum("dk,dk->k", diff, diff)
