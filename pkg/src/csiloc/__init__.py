"""Indoor positioning from MIMO-OFDM channel state information.

The package covers the full pipeline: synthetic channel measurements with
realistic transceiver impairments, impairment-robust feature extraction,
probability-map neural positioners, multi-link probability fusion, and
evaluation/reporting, plus a portable binary container for every artifact
the stages exchange.
"""

from .grid import (Grid, GridMismatchError, PositionEstimate, ProbabilityMap,
                   RectLattice, covariance, expected_location, in_hull,
                   uniform_grid, variance_vector)
from .labels import (ConvergenceError, InfeasibleTargetError, LabelConfig,
                     lp_oracle, min_variance_pmf, min_variance_pmf_rect)

__all__ = [
    "Grid", "GridMismatchError", "PositionEstimate", "ProbabilityMap",
    "RectLattice", "covariance", "expected_location", "in_hull",
    "uniform_grid", "variance_vector",
    "ConvergenceError", "InfeasibleTargetError", "LabelConfig",
    "lp_oracle", "min_variance_pmf", "min_variance_pmf_rect",
]

__version__ = "0.1.0"
