"""Time marching in physical and self-similar variables.

Self-similar profiles are obtained as long-time limits of the rescaled
equation

    dU/dtau + X dU/dX + 2U = alpha N(U),     M_1(U) = 1,

with ``tau = ln(1 + t)/alpha`` and ``X = x (1 + t)**(1/alpha)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, StiffnessError
from .kernels import BreakageLaw, CollisionKernel
from .operator import (
    DensityField,
    Grid,
    RedistributionTable,
    apply_collision_operator,
    apply_rescaled_operator,
    boundary_outflow,
    build_redistribution,
    collision_frequency,
    discretize,
    moment,
)

logger = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    cfl: float = 0.9
    dt_max: float = 0.1
    tau_end: float = 200.0
    stationarity_tol: float = 1e-8
    record_every: int = 1
    dt_min: float = 1e-12
    snapshot_every: int = 0  # 0: no field snapshots

    def __post_init__(self) -> None:
        for name in ("cfl", "dt_max", "tau_end", "stationarity_tol", "dt_min"):
            if not getattr(self, name) > 0.0:
                raise DomainError(f"solver parameter {name} must be positive")
        if self.cfl > 1.0:
            raise DomainError(f"cfl must not exceed 1, got {self.cfl}")
        if int(self.record_every) < 1 or int(self.snapshot_every) < 0:
            raise DomainError("record_every must be >= 1 and snapshot_every >= 0")


def history_orders(K: CollisionKernel) -> tuple[float, ...]:
    """Moment orders tracked along a run.

    Besides ``k0, 1, 2, 1 + lambda2`` this covers everything the moment
    balance for ``k = 2, 3`` needs.
    """
    l1, l2 = K.lambda1, K.lambda2
    orders = {0.0, K.k0, 1.0, 2.0, 3.0, l1, l2, 1 + l1, 1 + l2}
    orders.update(k + l for k in (2.0, 3.0) for l in (l1, l2))
    return tuple(sorted(orders))


def moment_key(k: float) -> str:
    return f"M_{k:g}"


@dataclass
class EvolutionState:
    time: float
    field: DensityField
    orders: tuple[float, ...] = (0.0, 1.0, 2.0)
    history: list[dict[str, float]] = field(default_factory=list)
    snapshots: list[tuple[float, np.ndarray]] = field(default_factory=list)
    steps: int = 0
    outflow_total: float = 0.0
    clipped_mass: float = 0.0
    initial_mass: float = float("nan")
    residual: float = float("nan")
    last_outflow: float = 0.0

    def __post_init__(self) -> None:
        if math.isnan(self.initial_mass):
            self.initial_mass = moment(self.field, 1.0)

    def record(self) -> None:
        row = {"time": self.time}
        f = self.field
        for k in self.orders:
            row[moment_key(k)] = moment(f, k)
        row["outflow"] = self.outflow_total
        row["clipped"] = self.clipped_mass
        row["residual"] = self.residual
        if self.history and row["time"] <= self.history[-1]["time"]:
            self.history[-1] = row
        else:
            self.history.append(row)

    def snapshot(self) -> None:
        if self.snapshots and self.snapshots[-1][0] == self.time:
            return
        self.snapshots.append((self.time, self.field.values.copy()))

    def series(self, key: str) -> np.ndarray:
        return np.array([row[key] for row in self.history])

    def mass_defect(self) -> float:
        """Relative gap between ``M_1`` and the initial mass minus outflow and clipping."""
        expected = self.initial_mass - self.outflow_total - self.clipped_mass
        return abs(moment(self.field, 1.0) - expected) / self.initial_mass


@dataclass
class StationaryResult:
    profile: DensityField
    residual: float
    iterations: int
    converged: bool
    tau: float
    outflow_total: float
    clipped_mass: float
    state: EvolutionState
    diagnostics: object | None = None  # attached verification report


# --------------------------------------------------------------------------
# similarity variables


def mean_size(t, K: CollisionKernel, omega: float | None = None):
    """Characteristic size ``e(t) = [1 + omega t (lambda - 1)]**(1/(1 - lambda))``."""
    omega = 1.0 / K.alpha if omega is None else omega
    lam = K.degree
    t = np.asarray(t, dtype=float)
    out = (1.0 + omega * t * (lam - 1.0)) ** (1.0 / (1.0 - lam))
    return float(out) if out.ndim == 0 else out


def to_rescaled(t, x, u_value, K: CollisionKernel):
    """``(t, x, u) -> (tau, X, U)``."""
    a = K.alpha
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("physical time must be nonnegative")
    tau = np.log1p(t) / a
    X = np.asarray(x, dtype=float) * (1.0 + t) ** (1.0 / a)
    U = (1.0 + t) ** (-2.0 / a) * np.asarray(u_value, dtype=float)
    return _scalarize(tau), _scalarize(X), _scalarize(U)


def from_rescaled(tau, X, U_value, K: CollisionKernel):
    """``(tau, X, U) -> (t, x, u)``; inverse of :func:`to_rescaled`."""
    a = K.alpha
    tau = np.asarray(tau, dtype=float)
    t = np.expm1(a * tau)
    x = np.asarray(X, dtype=float) * np.exp(-tau)
    u = np.exp(2.0 * tau) * np.asarray(U_value, dtype=float)
    return _scalarize(t), _scalarize(x), _scalarize(u)


def _scalarize(a):
    a = np.asarray(a)
    return float(a) if a.ndim == 0 else a


def interpolate_log(field: DensityField, x: np.ndarray) -> np.ndarray:
    """Piecewise-linear interpolation of cell values in ``ln x``; zero off-grid."""
    g = field.grid
    lx = np.log(np.asarray(x, dtype=float))
    lc = np.log(g.centers)
    out = np.interp(lx, lc, field.values)
    inside = (x >= g.xmin) & (x <= g.xmax)
    return np.where(inside, out, 0.0)


def physical_to_rescaled(field: DensityField, t: float, K: CollisionKernel, grid: Grid) -> DensityField:
    """Express ``u(t, .)`` as ``U(tau, .)`` on ``grid``."""
    s = 1.0 + t
    x = grid.centers * s ** (-1.0 / K.alpha)
    return DensityField(grid, s ** (-2.0 / K.alpha) * interpolate_log(field, x))


def self_similar_distance(
    state: EvolutionState,
    profile: DensityField,
    K: CollisionKernel,
    omega: float | None = None,
) -> float:
    """``int X |e(t)^2 u(t, e(t) X) - eta(X)| dX`` on the profile grid."""
    t = state.time
    if t <= 0.0:
        raise DomainError("self-similar distance needs t > 0")
    g = profile.grid
    e = mean_size(t, K, omega)
    u = interpolate_log(state.field, e * g.centers)
    return float(np.sum(g.centers * g.widths * np.abs(e * e * u - profile.values)))


# --------------------------------------------------------------------------
# initial data


def reference_profile(x):
    """Closed-form profile ``4 exp(-2x)`` for ``lambda1 = lambda2 = 1`` and ``beta = 2``."""
    return 4.0 * np.exp(-2.0 * np.asarray(x, dtype=float))


def initial_field(grid: Grid, shape: str = "exponential", **params) -> DensityField:
    """Named initial condition normalised to unit mass.

    ``exponential``: ``exp(-x)``; ``two_bump``: log-normal bumps at 0.3 and 3;
    ``monodisperse``: all mass in the cell containing ``x0``;
    ``reference``: ``4 exp(-2x)``.
    """
    c = grid.centers
    if shape == "exponential":
        vals = np.exp(-c)
    elif shape == "two_bump":
        lc = np.log(c)
        vals = np.exp(-(((lc - math.log(0.3)) / 0.3) ** 2)) + 0.5 * np.exp(-(((lc - math.log(3.0)) / 0.3) ** 2))
    elif shape == "monodisperse":
        x0 = float(params.get("x0", 1.0))
        if not grid.xmin <= x0 < grid.xmax:
            raise DomainError(f"x0={x0} lies outside the grid")
        vals = np.zeros(grid.n)
        vals[np.searchsorted(grid.edges, x0, side="right") - 1] = 1.0
    elif shape == "reference":
        vals = reference_profile(c)
    else:
        raise DomainError(f"unknown initial shape {shape!r}")
    return DensityField(grid, vals).normalized()


# --------------------------------------------------------------------------
# time stepping


def _rescaled_dt(field: DensityField, cfg: SolverConfig, K: CollisionKernel) -> float:
    # forward Euler keeps u >= 0 while dt * (outflow rate + loss rate) <= 1
    speed = 1.0 / field.grid.log_widths + K.alpha * collision_frequency(field, K)
    return min(cfg.dt_max, cfg.cfl / float(np.max(speed)))


def _physical_dt(field: DensityField, cfg: SolverConfig, K: CollisionKernel) -> float:
    freq = float(np.max(collision_frequency(field, K)))
    return cfg.dt_max if freq <= 0.0 else min(cfg.dt_max, cfg.cfl / freq)


def _clip(values: np.ndarray, grid: Grid) -> tuple[np.ndarray, float]:
    neg = values < 0.0
    if not np.any(neg):
        return values, 0.0
    lost = float(-np.sum((grid.centers * grid.widths * values)[neg]))
    return np.where(neg, 0.0, values), lost


def _heun(
    state: EvolutionState,
    rhs: Callable[[DensityField], DensityField],
    dt: float,
    with_outflow: bool,
) -> None:
    """One SSP-RK2 step: average of ``u`` and two forward-Euler stages."""
    g = state.field.grid
    u0 = state.field
    r0 = rhs(u0)
    v1, clip1 = _clip(u0.values + dt * r0.values, g)
    u1 = DensityField(g, v1)
    r1 = rhs(u1)
    v2, clip2 = _clip(0.5 * u0.values + 0.5 * (v1 + dt * r1.values), g)
    out = 0.5 * dt * (boundary_outflow(u0) + boundary_outflow(u1)) if with_outflow else 0.0
    state.field = DensityField(g, v2)
    state.time += dt
    state.steps += 1
    state.outflow_total += out
    state.last_outflow = out
    # the stage-1 clip enters the final state with weight 1/2
    state.clipped_mass += 0.5 * clip1 + clip2
    state.residual = float(np.sum(g.centers * g.widths * np.abs(r0.values)))


def step_rescaled(
    state: EvolutionState,
    cfg: SolverConfig,
    K: CollisionKernel,
    R: RedistributionTable,
    dt: float | None = None,
) -> EvolutionState:
    """Advance the rescaled equation by one explicit step (state is updated in place).

    ``state.residual`` holds the mass-weighted norm of dU/dtau at the start of
    the step.
    """
    if dt is None:
        dt = _rescaled_dt(state.field, cfg, K)
    if dt < cfg.dt_min:
        raise StiffnessError(f"time step {dt:.3e} fell below dt_min={cfg.dt_min:.1e} at tau={state.time:.6g}")
    _heun(state, lambda f: apply_rescaled_operator(f, K, R), dt, with_outflow=True)
    return state


def step_physical(
    state: EvolutionState,
    cfg: SolverConfig,
    K: CollisionKernel,
    R: RedistributionTable,
    dt: float | None = None,
) -> EvolutionState:
    if dt is None:
        dt = _physical_dt(state.field, cfg, K)
    if dt < cfg.dt_min:
        raise StiffnessError(f"time step {dt:.3e} fell below dt_min={cfg.dt_min:.1e} at t={state.time:.6g}")
    _heun(state, lambda f: apply_collision_operator(f, K, R), dt, with_outflow=False)
    return state


def _march(
    state: EvolutionState,
    step: Callable[..., EvolutionState],
    dt_rule: Callable[[DensityField], float],
    t_end: float,
    cfg: SolverConfig,
    output_times: Iterable[float] = (),
    stop: Callable[[EvolutionState], bool] | None = None,
) -> EvolutionState:
    targets = sorted(t for t in output_times if state.time < t <= t_end)
    if not state.history:
        state.record()
    if cfg.snapshot_every or targets:
        state.snapshot()
    while state.time < t_end:
        dt = dt_rule(state.field)
        nxt = targets[0] if targets else t_end
        hit = state.time + dt >= nxt
        if hit:
            dt = nxt - state.time
        step(state, dt=dt)
        if hit:
            state.time = nxt  # land exactly on the requested time
        if hit and targets:
            targets.pop(0)
            state.snapshot()
        elif cfg.snapshot_every and state.steps % cfg.snapshot_every == 0:
            state.snapshot()
        if state.steps % cfg.record_every == 0 or hit:
            state.record()
        if stop is not None and stop(state):
            break
    state.record()
    return state


def simulate_rescaled(
    initial: DensityField,
    tau_end: float,
    cfg: SolverConfig,
    K: CollisionKernel,
    law: BreakageLaw | None = None,
    R: RedistributionTable | None = None,
    output_times: Sequence[float] = (),
    tau0: float = 0.0,
) -> EvolutionState:
    """March the rescaled equation from ``tau0`` to ``tau_end``."""
    R = R if R is not None else build_redistribution(initial.grid, law)
    state = EvolutionState(time=tau0, field=initial, orders=history_orders(K))
    stepper = lambda s, dt: step_rescaled(s, cfg, K, R, dt=dt)  # noqa: E731
    return _march(state, stepper, lambda f: _rescaled_dt(f, cfg, K), tau_end, cfg, output_times)


def simulate_physical(
    initial: DensityField,
    t_end: float,
    cfg: SolverConfig,
    K: CollisionKernel,
    law: BreakageLaw | None = None,
    R: RedistributionTable | None = None,
    output_times: Sequence[float] = (),
    t0: float = 0.0,
) -> EvolutionState:
    """March ``du/dt = N_h(u)``; there is no boundary flux in physical variables."""
    if np.any(initial.values < 0):
        raise DomainError("initial field must be nonnegative")
    R = R if R is not None else build_redistribution(initial.grid, law)
    state = EvolutionState(time=t0, field=initial, orders=history_orders(K))
    stepper = lambda s, dt: step_physical(s, cfg, K, R, dt=dt)  # noqa: E731
    return _march(state, stepper, lambda f: _physical_dt(f, cfg, K), t_end, cfg, output_times)


def run_to_stationarity(
    initial: DensityField,
    cfg: SolverConfig,
    K: CollisionKernel,
    law: BreakageLaw | None = None,
    R: RedistributionTable | None = None,
) -> StationaryResult:
    """March the rescaled equation until ``int X |dU/dtau| dX < stationarity_tol``.

    The initial field is renormalised to unit mass. Hitting ``tau_end``
    first returns an unconverged result rather than raising.
    """
    if np.any(initial.values < 0):
        raise DomainError("initial field must be nonnegative")
    R = R if R is not None else build_redistribution(initial.grid, law)
    start = initial.normalized()
    state = EvolutionState(time=0.0, field=start, orders=history_orders(K))

    def stop(s: EvolutionState) -> bool:
        return s.residual < cfg.stationarity_tol

    stepper = lambda s, dt: step_rescaled(s, cfg, K, R, dt=dt)  # noqa: E731
    _march(state, stepper, lambda f: _rescaled_dt(f, cfg, K), cfg.tau_end, cfg, stop=stop)
    # residual of the returned profile itself
    final_rate = apply_rescaled_operator(state.field, K, R)
    g = state.field.grid
    state.residual = float(np.sum(g.centers * g.widths * np.abs(final_rate.values)))
    converged = state.residual < cfg.stationarity_tol
    if not converged:
        logger.warning("no stationarity by tau=%.4g: residual %.3e", state.time, state.residual)
    return StationaryResult(
        profile=state.field.normalized(),
        residual=state.residual,
        iterations=state.steps,
        converged=converged,
        tau=state.time,
        outflow_total=state.outflow_total,
        clipped_mass=state.clipped_mass,
        state=state,
    )
