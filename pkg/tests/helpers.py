"""Shared oracles and cached solver runs for the test suite."""

from __future__ import annotations

from functools import lru_cache
from math import gamma

import numpy as np

from breakage_profiles import CollisionKernel, PowerLaw, SolverConfig, make_geometric_grid, run_to_stationarity
from breakage_profiles.operator import DensityField, Grid
from breakage_profiles.solver import initial_field

REFERENCE_DOMAIN = (1e-4, 40.0)

# (lambda1, lambda2, nu) -> truncated domain wide enough for the profile tail
PARAMETER_SETS = {
    (1.0, 1.0, 0.0): (1e-4, 40.0),
    (0.75, 0.75, 0.0): (1e-4, 1000.0),
    (0.5, 1.0, -0.5): (1e-4, 200.0),
}


def analytic_moment(k: float) -> float:
    """``M_k(4 exp(-2x)) = 4 Gamma(k+1) / 2^(k+1)``."""
    return 4.0 * gamma(k + 1.0) / 2.0 ** (k + 1.0)


def analytic_profile(x):
    return 4.0 * np.exp(-2.0 * np.asarray(x, dtype=float))


def coarsen(field: DensityField) -> DensityField:
    """Merge neighbouring cell pairs, conserving the cell integrals."""
    g = field.grid
    coarse = Grid(g.edges[::2])
    totals = (field.values * g.widths).reshape(-1, 2).sum(axis=1)
    return DensityField(coarse, totals / coarse.widths)


@lru_cache(maxsize=None)
def stationary(params: tuple[float, float, float], cells: int, shape: str = "exponential"):
    """Stationary profile for ``(lambda1, lambda2, nu)``; cached across test modules."""
    l1, l2, nu = params
    xmin, xmax = PARAMETER_SETS[params]
    grid = make_geometric_grid(xmin, xmax, cells)
    K = CollisionKernel(l1, l2, 0.0)
    law = PowerLaw(nu)
    result = run_to_stationarity(initial_field(grid, shape), SolverConfig(tau_end=600.0), K, law)
    return result, K, law
