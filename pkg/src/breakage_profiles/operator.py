"""Sectional discretisation of the collision-induced breakage operator.

Size space is truncated to ``[xmin, xmax]`` and split into cells; each cell
stores a number density ``u_i`` and is represented by the geometric mean of
its edges. Breakup products are distributed with a mass-fraction table so
that the discrete operator conserves the first moment to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DomainError, GridMismatchError
from .kernels import BreakageLaw, CollisionKernel, eval_kernel


@dataclass(frozen=True, eq=False)
class Grid:
    """Cell partition of a truncated size interval."""

    edges: np.ndarray

    def __post_init__(self) -> None:
        e = np.asarray(self.edges, dtype=float)
        if e.ndim != 1 or e.size < 2:
            raise DomainError("a grid needs at least two edges")
        if e[0] <= 0.0 or np.any(np.diff(e) <= 0.0):
            raise DomainError("grid edges must be positive and strictly increasing")
        e.setflags(write=False)
        object.__setattr__(self, "edges", e)

    @property
    def n(self) -> int:
        return self.edges.size - 1

    @cached_property
    def centers(self) -> np.ndarray:
        return np.sqrt(self.edges[:-1]) * np.sqrt(self.edges[1:])

    @cached_property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @cached_property
    def log_widths(self) -> np.ndarray:
        return np.log(self.edges[1:] / self.edges[:-1])

    @property
    def xmin(self) -> float:
        return float(self.edges[0])

    @property
    def xmax(self) -> float:
        return float(self.edges[-1])

    @cached_property
    def is_geometric(self) -> bool:
        h = self.log_widths
        return bool(np.allclose(h, h[0], rtol=1e-10, atol=0.0))

    def same_as(self, other: "Grid") -> bool:
        return self is other or (
            self.edges.shape == other.edges.shape and bool(np.array_equal(self.edges, other.edges))
        )

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Grid) and self.same_as(other)

    __hash__ = object.__hash__


def make_geometric_grid(xmin: float, xmax: float, n: int) -> Grid:
    """``n`` cells with constant edge ratio ``(xmax/xmin)**(1/n)``."""
    if not (xmin > 0.0 and xmax > xmin and math.isfinite(xmax)):
        raise DomainError(f"need 0 < xmin < xmax, got xmin={xmin}, xmax={xmax}")
    if int(n) != n or n < 1:
        raise DomainError(f"cell count must be a positive integer, got {n}")
    n = int(n)
    log_edges = np.linspace(math.log(xmin), math.log(xmax), n + 1)
    edges = np.exp(log_edges)
    edges[0], edges[-1] = xmin, xmax
    return Grid(edges)


@dataclass(frozen=True, eq=False)
class DensityField:
    """Cell-averaged number density (or a rate of change of one)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise GridMismatchError(f"expected {self.grid.n} values, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    def moment(self, k: float) -> float:
        return moment(self, k)

    def cell_masses(self) -> np.ndarray:
        g = self.grid
        return g.centers * self.values * g.widths

    def scaled(self, c: float) -> "DensityField":
        return DensityField(self.grid, c * self.values)

    def normalized(self) -> "DensityField":
        """Copy rescaled to unit first moment."""
        m1 = moment(self, 1.0)
        if not m1 > 0.0:
            raise DomainError("cannot normalise a field without positive mass")
        return DensityField(self.grid, self.values / m1)

    def to_csv(self, path: str | Path, time: float | None = None) -> None:
        write_field_csv(self, path, time=time)

    @classmethod
    def from_csv(cls, path: str | Path) -> "DensityField":
        return read_field_csv(path)[0]


def moment(field: DensityField, k: float) -> float:
    """Midpoint quadrature of ``int x**k u dx`` over the grid."""
    g = field.grid
    return float(np.sum(g.centers**k * field.values * g.widths))


def weighted_l1(a: DensityField, b: DensityField) -> float:
    """``int x |a - b| dx`` for two fields on the same grid."""
    _check_grid(a.grid, b.grid)
    g = a.grid
    return float(np.sum(g.centers * g.widths * np.abs(a.values - b.values)))


def discretize(grid: Grid, fn) -> DensityField:
    """Sample ``fn`` at the cell centres."""
    return DensityField(grid, np.asarray(fn(grid.centers), dtype=float))


# --------------------------------------------------------------------------
# redistribution


@dataclass(frozen=True, eq=False)
class RedistributionTable:
    """``fractions[i, j]``: share of mass broken off in cell ``j`` landing in cell ``i``.

    ``raw`` keeps the unnormalised cell integrals of the mass cdf;
    ``renormalization`` is the per-column factor ``1 / raw.sum(axis=0)``
    that compensates fragments lost below ``xmin``.
    """

    grid: Grid
    fractions: np.ndarray
    raw: np.ndarray
    renormalization: np.ndarray


def build_redistribution(grid: Grid, law: BreakageLaw) -> RedistributionTable:
    """Tabulate where the mass of a particle of size ``c_j`` goes when it breaks.

    Cell ``i < j`` receives ``B(e_{i+1}/c_j) - B(e_i/c_j)`` with ``B`` the mass
    cdf of ``beta``; the source cell keeps the fragments in ``(e_j, c_j)``.
    Columns are rescaled to unit sum.
    """
    n = grid.n
    e, c = grid.edges, grid.centers
    if grid.is_geometric and n > 1:
        # cell integrals depend on i - j only
        r = math.exp(grid.log_widths[0])
        offs = np.arange(n)  # j - i
        hi = np.where(offs == 0, 1.0, r ** (0.5 - offs))
        lo = r ** (-0.5 - offs)
        band = law.mass_cdf(hi) - law.mass_cdf(lo)
        i_idx, j_idx = np.indices((n, n))
        d = j_idx - i_idx
        raw = np.where(d >= 0, band[np.clip(d, 0, n - 1)], 0.0)
    else:
        lo = e[:-1, None] / c[None, :]
        hi = np.minimum(e[1:, None], c[None, :]) / c[None, :]
        raw = np.where(hi > lo, law.mass_cdf(hi) - law.mass_cdf(np.minimum(lo, hi)), 0.0)
    raw = np.maximum(raw, 0.0)
    colsum = raw.sum(axis=0)
    fractions = raw / np.where(colsum > 0.0, colsum, 1.0)
    # no fragment mass resolvable on the grid: the particle stays put
    for j in np.flatnonzero(colsum <= 0.0):
        fractions[j, j] = 1.0
    # absorb the round-off of the column sums into the largest entry
    for j in range(n):
        k = int(np.argmax(fractions[:, j]))
        fractions[k, j] += 1.0 - math.fsum(fractions[:, j])
    renorm = np.where(colsum > 0.0, 1.0 / np.where(colsum > 0.0, colsum, 1.0), np.inf)
    return RedistributionTable(grid=grid, fractions=fractions, raw=raw, renormalization=renorm)


# --------------------------------------------------------------------------
# operators


class OperatorParts(NamedTuple):
    gain: DensityField
    loss: DensityField

    @property
    def rate(self) -> DensityField:
        return DensityField(self.gain.grid, self.gain.values - self.loss.values)


def _check_grid(a: Grid, b: Grid) -> None:
    if not a.same_as(b):
        raise GridMismatchError("fields and tables live on different grids")


def collision_frequency(field: DensityField, K: CollisionKernel) -> np.ndarray:
    """``sum_l Psi(c_j, c_l) u_l w_l`` for every cell ``j``.

    The kernel is a sum of two products, so the double sum factorises into
    discrete moments.
    """
    g = field.grid
    c = g.centers
    m_l1 = moment(field, K.lambda1)
    m_l2 = moment(field, K.lambda2)
    return c**K.lambda1 * m_l2 + c**K.lambda2 * m_l1


def collision_parts(field: DensityField, K: CollisionKernel, R: RedistributionTable) -> OperatorParts:
    _check_grid(field.grid, R.grid)
    g = field.grid
    u = field.values
    loss = u * collision_frequency(field, K)
    released = g.centers * loss * g.widths
    gain = (R.fractions @ released) / (g.centers * g.widths)
    return OperatorParts(DensityField(g, gain), DensityField(g, loss))


def apply_collision_operator(field: DensityField, K: CollisionKernel, R: RedistributionTable) -> DensityField:
    """Discrete breakage operator ``N_h(u)`` (gain minus loss)."""
    return collision_parts(field, K, R).rate


def drift_fluxes(field: DensityField) -> np.ndarray:
    """Mass fluxes through the ``n + 1`` cell edges for the velocity ``dX/dtau = X``.

    Upwind from the left cell, with the cell's mass spread uniformly in
    ``ln X`` (mass density ``m_i / (h_i x)`` inside the cell), so the flux
    through the right edge is ``edge * m_i / (h_i edge) = m_i / h_i``.
    Nothing enters through ``xmin``.
    """
    g = field.grid
    F = np.zeros(g.n + 1)
    F[1:] = field.cell_masses() / g.log_widths
    return F


def boundary_outflow(field: DensityField) -> float:
    """Mass flux leaving through ``xmax``."""
    g = field.grid
    return float(g.centers[-1] * field.values[-1] * g.widths[-1] / g.log_widths[-1])


def apply_rescaled_operator(field: DensityField, K: CollisionKernel, R: RedistributionTable) -> DensityField:
    """Right-hand side of the rescaled equation: ``alpha N_h(U) - (X dU/dX + 2U)``.

    The dilation term is written in conservative mass form
    ``(1/X) d/dX (X * X U)``.
    """
    _check_grid(field.grid, R.grid)
    g = field.grid
    F = drift_fluxes(field)
    drift = (F[1:] - F[:-1]) / (g.centers * g.widths)
    coll = apply_collision_operator(field, K, R).values
    return DensityField(g, K.alpha * coll - drift)


def brute_force_parts(field: DensityField, K: CollisionKernel, law: BreakageLaw) -> OperatorParts:
    """Dense double-sum quadrature of the breakage operator (small grids only).

    Gain at ``c_i`` sums ``Psi(c_j, c_l) u_j u_l w_j w_l (1/c_j) beta(c_i/c_j)``
    over all pairs with ``c_i < c_j``; no renormalisation is applied.
    """
    g = field.grid
    c, w, u = g.centers, g.widths, field.values
    psi = eval_kernel(K, c[:, None], c[None, :])
    pair = psi * (u * w)[:, None] * (u * w)[None, :]  # (j, l)
    per_source = pair.sum(axis=1)  # collisions suffered by cell j
    ratio = c[:, None] / c[None, :]  # (i, j)
    below = ratio < 1.0
    daughters = np.where(below, law.density(np.where(below, ratio, 0.5)), 0.0) / c[None, :]
    gain = daughters @ per_source
    loss = u * (psi * (u * w)[None, :]).sum(axis=1)
    return OperatorParts(DensityField(g, gain), DensityField(g, loss))


def brute_force_operator(field: DensityField, K: CollisionKernel, law: BreakageLaw) -> DensityField:
    return brute_force_parts(field, K, law).rate


def gain_renormalization(grid: Grid, law: BreakageLaw) -> np.ndarray:
    """Per-source ratio of table mass to point-evaluated oracle mass below the source.

    Entry ``j`` compares the mass the redistribution table sends into cells
    ``i < j`` with ``sum_{i<j} c_i w_i beta(c_i/c_j) / c_j**2``. Cell 0 has
    no cells below it and is reported as NaN.
    """
    c, w = grid.centers, grid.widths
    R = build_redistribution(grid, law)
    strict = np.triu(np.ones((grid.n, grid.n), dtype=bool), k=1)  # i < j
    table = np.where(strict, R.raw, 0.0).sum(axis=0)
    ratio = c[:, None] / c[None, :]
    point = np.where(strict, law.density(np.where(strict, ratio, 0.5)), 0.0)
    oracle = (c * w) @ point / c**2
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(oracle > 0.0, table / oracle, np.nan)


def oracle_mass_defect(field: DensityField, K: CollisionKernel, law: BreakageLaw) -> float:
    """``|int x N_oracle(u) dx|`` relative to the mass removed by the loss term."""
    parts = brute_force_parts(field, K, law)
    g = field.grid
    cw = g.centers * g.widths
    return float(abs(np.sum(cw * parts.rate.values)) / np.sum(cw * parts.loss.values))


# --------------------------------------------------------------------------
# CSV round trip


def write_field_csv(field: DensityField, path: str | Path, time: float | None = None) -> None:
    """Two-column ``center,value`` CSV preceded by comment lines carrying the grid."""
    g = field.grid
    lines = ["# edges: " + " ".join(repr(float(x)) for x in g.edges)]
    if time is not None:
        lines.append(f"# time: {float(time)!r}")
    lines.append("center,value")
    lines.extend(f"{float(c)!r},{float(v)!r}" for c, v in zip(g.centers, field.values))
    Path(path).write_text("\n".join(lines) + "\n")


def read_field_csv(path: str | Path) -> tuple[DensityField, float | None]:
    """Inverse of :func:`write_field_csv`; returns the field and the stored time."""
    edges = None
    time = None
    centers, values = [], []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, rest = line[1:].partition(":")
            key = key.strip()
            if key == "edges":
                edges = np.array([float(t) for t in rest.split()])
            elif key == "time":
                time = float(rest)
            continue
        if line.startswith("center"):
            continue
        a, b = line.split(",")
        centers.append(float(a))
        values.append(float(b))
    if edges is None:
        raise DomainError(f"{path}: missing '# edges:' header line")
    grid = Grid(edges)
    if len(values) != grid.n or not np.allclose(grid.centers, centers, rtol=1e-14, atol=0.0):
        raise GridMismatchError(f"{path}: centre column does not match the stored edges")
    return DensityField(grid, np.array(values)), time
