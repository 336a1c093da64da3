"""Sectional solver and verification tools for collision-induced breakage."""

from .errors import ConfigError, DomainError, GridMismatchError, StiffnessError
from .kernels import (
    BreakageLaw,
    CollisionKernel,
    Mollified,
    PowerLaw,
    Tabulated,
    beta_moment,
    e_beta,
    eval_daughter,
    eval_kernel,
    mollify,
    xi,
)
from .operator import (
    DensityField,
    Grid,
    RedistributionTable,
    apply_collision_operator,
    apply_rescaled_operator,
    brute_force_operator,
    build_redistribution,
    discretize,
    make_geometric_grid,
    moment,
    weighted_l1,
)
from .solver import (
    EvolutionState,
    SolverConfig,
    StationaryResult,
    from_rescaled,
    mean_size,
    run_to_stationarity,
    self_similar_distance,
    simulate_physical,
    simulate_rescaled,
    step_rescaled,
    to_rescaled,
)

__version__ = "0.1.0"
