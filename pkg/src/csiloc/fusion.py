"""Combining probability maps from several links into one position estimate.

Four strategies are provided: normalized point-wise products of the maps
(probability conflation), inverse-variance combination of per-link mean and
variance summaries (Gaussian conflation), plain averaging of per-link
expected locations, and a learned linear read-out over the stacked maps.
All of them behave identically whether the maps come from different access
points, different transmit antennas, or a mixture of both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (Grid, GridMismatchError, PositionEstimate, ProbabilityMap,
                   covariance, expected_location)

VAR_FLOOR = 1e-12


class DegenerateConflationError(ValueError):
    """The conflated mass vanished everywhere (disjoint map supports)."""


@dataclass(frozen=True)
class FusionWeights:
    """Linear read-out mapping stacked maps to a position: D x (n_links * K)."""

    matrix: np.ndarray
    n_links: int
    k: int
    grid_id: int

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape[1] != self.n_links * self.k:
            raise ValueError("weight matrix width must be n_links * K")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def initial(cls, grid: Grid, n_links: int) -> "FusionWeights":
        """Averaging initialization: n_links copies of the grid, each scaled
        by 1/n_links, side by side."""
        block = grid.points / n_links
        return cls(np.hstack([block] * n_links), n_links, grid.count, grid.grid_id)


def _common_grid(maps) -> int:
    if len(maps) < 1:
        raise ValueError("need at least one probability map")
    gid = maps[0].grid_id
    k = maps[0].mass.size
    for p in maps[1:]:
        if p.grid_id != gid or p.mass.size != k:
            raise GridMismatchError("maps must share one grid")
    return gid


def conflate_probability(maps) -> ProbabilityMap:
    """Point-wise product of the maps, renormalized to a probability map.

    The product is evaluated in log space and rescaled by its maximum before
    exponentiation, so long products of small masses do not underflow; only
    a product that is genuinely zero everywhere raises
    :class:`DegenerateConflationError`.
    """
    gid = _common_grid(maps)
    with np.errstate(divide="ignore"):
        log_mu = np.sum([np.log(p.mass) for p in maps], axis=0)
    top = np.max(log_mu)
    if not np.isfinite(top):
        raise DegenerateConflationError("maps have disjoint supports")
    mu = np.exp(log_mu - top)
    return ProbabilityMap(mu / mu.sum(), gid)


def conflate_gaussian(estimates) -> PositionEstimate:
    """Inverse-variance combination of independent position estimates.

    Each dimension is fused separately: the mean is the precision-weighted
    average of the input means and the fused variance is the reciprocal of
    the summed precisions. Variances are floored at ``VAR_FLOOR`` so a
    numerically zero-variance map cannot dominate through division by zero.
    """
    if len(estimates) < 1:
        raise ValueError("need at least one estimate")
    d = estimates[0].mean.size
    means = np.stack([e.mean for e in estimates])
    if means.shape[1] != d:
        raise ValueError("estimates must share one dimensionality")
    variances = np.maximum(np.stack([e.diag_cov for e in estimates]), VAR_FLOOR)
    precision = 1.0 / variances
    fused_var = 1.0 / precision.sum(axis=0)
    fused_mean = (precision * means).sum(axis=0) * fused_var
    return PositionEstimate(fused_mean, fused_var)


def estimate_from_map(p: ProbabilityMap, grid: Grid) -> PositionEstimate:
    """Mean and per-dimension variance summary of one probability map."""
    mean = expected_location(p, grid)
    diag = np.maximum(np.diag(covariance(p, grid)), 0.0)
    return PositionEstimate(mean, diag)


def stack_maps(maps) -> np.ndarray:
    _common_grid(maps)
    return np.concatenate([p.mass for p in maps])


def fuse_average(maps, grid: Grid) -> np.ndarray:
    """Unweighted average of the per-map expected locations."""
    weights = FusionWeights.initial(grid, len(maps))
    return fuse_nn(weights, maps)


def fuse_nn(weights: FusionWeights, maps) -> np.ndarray:
    """Apply a (possibly trained) linear read-out to the stacked maps."""
    gid = _common_grid(maps)
    if gid != weights.grid_id:
        raise GridMismatchError("weights were built for a different grid")
    stacked = stack_maps(maps)
    if stacked.size != weights.matrix.shape[1]:
        raise GridMismatchError(
            f"stacked maps have {stacked.size} entries, weights expect "
            f"{weights.matrix.shape[1]}")
    return weights.matrix @ stacked
