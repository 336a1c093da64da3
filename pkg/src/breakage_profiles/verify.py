"""Numerical checks of the identities and bounds satisfied by self-similar profiles.

Every check returns a :class:`CheckResult`. Equality checks pass when the
residual is at most the tolerance; bound checks pass when the slack
``bound - value`` is at least ``-tolerance``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError
from .kernels import BreakageLaw, CollisionKernel, beta_moment, e_beta, xi
from .operator import (
    DensityField,
    RedistributionTable,
    build_redistribution,
    collision_frequency,
    collision_parts,
    moment,
)
from .solver import EvolutionState, moment_key

MASS_TOL = 1e-6
BOUND_SLACK = 1e-6
REFERENCE_CELLS = 512
DEFAULT_TEST_EXPONENTS = (1.0, 1.5, 2.0, 3.0)


@dataclass
class CheckResult:
    name: str
    anchor: str
    kind: str  # "equality", "bound" or "precondition"
    computed: float
    reference: float
    tolerance: float
    passed: bool
    note: str = ""
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "CheckResult":
        return cls(**data)


def _equality(name, anchor, residual, tol, reference=0.0, note="", **details) -> CheckResult:
    residual = float(residual)
    return CheckResult(name, anchor, "equality", residual, float(reference), float(tol),
                       bool(residual <= tol), note, details)


def _bound(name, anchor, value, bound, tol, upper=True, note="", **details) -> CheckResult:
    value, bound = float(value), float(bound)
    slack = bound - value if upper else value - bound
    details.setdefault("slack", slack)
    return CheckResult(name, anchor, "bound", value, bound, float(tol), bool(slack >= -tol), note, details)


@dataclass
class VerificationReport:
    checks: list[CheckResult] = field(default_factory=list)
    parameters: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def extend(self, results: Iterable[CheckResult]) -> None:
        self.checks.extend(results)

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps({"parameters": self.parameters, "checks": [c.to_dict() for c in self.checks]}, indent=indent)

    @classmethod
    def from_json(cls, text: str) -> "VerificationReport":
        data = json.loads(text)
        return cls([CheckResult.from_dict(c) for c in data["checks"]], data.get("parameters", {}))

    def table(self) -> str:
        rows = [("check", "computed", "reference", "tol", "result")]
        for c in self.checks:
            rows.append((c.name, f"{c.computed:.6g}", f"{c.reference:.6g}", f"{c.tolerance:.1e}",
                         "pass" if c.passed else "FAIL"))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(s.ljust(w) for s, w in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "-" * len(lines[0]))
        return "\n".join(lines)


@dataclass(frozen=True)
class ProfileFunctionals:
    """Moments and derived constants of a profile."""

    L1: float
    e_beta: float
    g_max_coeff: float
    moments: dict[float, float]

    @classmethod
    def from_profile(cls, profile: DensityField, K: CollisionKernel, law: BreakageLaw) -> "ProfileFunctionals":
        l1, l2 = K.lambda1, K.lambda2
        orders = {0.0, K.k0, 1.0, 2.0, l1, l2, 1 + l1, 1 + l2}
        moments = {k: moment(profile, k) for k in sorted(orders)}
        L1 = moments[1 + l1] * moments[l2] + moments[1 + l2] * moments[l1]
        return cls(L1=L1, e_beta=e_beta(law), g_max_coeff=max(moments[l1], moments[l2]), moments=moments)


def _grid_scale(profile: DensityField) -> float:
    """Tolerance multiplier relative to a 512-cell grid."""
    return REFERENCE_CELLS / profile.grid.n


def _mass_precondition(profile: DensityField, name: str, anchor: str) -> CheckResult | None:
    m1 = moment(profile, 1.0)
    if abs(m1 - 1.0) <= MASS_TOL:
        return None
    return CheckResult(name, anchor, "precondition", m1, 1.0, MASS_TOL, False,
                       note="precondition failed: profile is not normalised to unit mass")


def check_l1_identity(profile: DensityField, K: CollisionKernel, law: BreakageLaw,
                      tol: float | None = None) -> CheckResult:
    """``|alpha e_beta L_1(eta) - 1|``; default tolerance 1% at 512 cells, scaled as ``1/n``."""
    name, anchor = "l1_identity", "L1 identity alpha*e_beta*L_1 = 1"
    failed = _mass_precondition(profile, name, anchor)
    if failed:
        return failed
    tol = 0.01 * _grid_scale(profile) if tol is None else tol
    fn = ProfileFunctionals.from_profile(profile, K, law)
    value = K.alpha * fn.e_beta * fn.L1
    return _equality(name, anchor, abs(value - 1.0), tol, reference=0.0, product=value, L1=fn.L1)


def check_moment_bounds(profile: DensityField, K: CollisionKernel, law: BreakageLaw,
                        tol: float = BOUND_SLACK) -> list[CheckResult]:
    """Lower bound on ``M_{lambda1}`` and upper bound on ``M_{1+lambda2}``."""
    anchor = "moment bounds from the L1 identity"
    failed = _mass_precondition(profile, "moment_bounds", anchor)
    if failed:
        return [failed]
    a, eb = K.alpha, e_beta(law)
    l1, l2 = K.lambda1, K.lambda2
    lower = (a * eb) ** ((1.0 - l1) / a)
    upper = (a * eb) ** (-l2 / a)
    return [
        _bound("moment_lower_bound", anchor, moment(profile, l1), lower, tol, upper=False, order=l1),
        _bound("moment_upper_bound", anchor, moment(profile, 1.0 + l2), upper, tol, upper=True, order=1.0 + l2),
    ]


def check_sup_bound(profile: DensityField, K: CollisionKernel, law: BreakageLaw,
                    tol: float = BOUND_SLACK) -> CheckResult:
    """``max x^{k0+1} eta <= alpha L_1 int z^{k0} beta``."""
    name, anchor = "sup_bound", "weighted sup bound"
    failed = _mass_precondition(profile, name, anchor)
    if failed:
        return failed
    c = profile.grid.centers
    lhs = float(np.max(c ** (K.k0 + 1.0) * profile.values))
    bound = K.alpha * ProfileFunctionals.from_profile(profile, K, law).L1 * beta_moment(law, K.k0)
    return _bound(name, anchor, lhs, bound, tol)


def g_function(profile: DensityField, K: CollisionKernel, x: np.ndarray) -> np.ndarray:
    """``g(x) = max(M_{lambda1}, M_{lambda2}) (x^lambda1/lambda1 + x^lambda2/lambda2)``."""
    l1, l2 = K.lambda1, K.lambda2
    coeff = max(moment(profile, l1), moment(profile, l2))
    return coeff * (x**l1 / l1 + x**l2 / l2)


def _support(values: np.ndarray, floor: float) -> slice:
    big = np.flatnonzero(values > floor * np.max(values)) if np.max(values) > 0 else np.array([], int)
    if big.size == 0:
        return slice(0, 0)
    return slice(int(big[0]), int(big[-1]) + 1)


def check_monotone_lower_bound(profile: DensityField, K: CollisionKernel, tol: float = 1e-3,
                               floor: float = 1e-12) -> CheckResult:
    """``h = x^2 exp(alpha g(x)) eta`` must be nondecreasing on the profile's support.

    The support runs from the first to the last cell whose value exceeds
    ``floor`` times the maximum; every cell in between must also be
    strictly positive.
    """
    name, anchor = "monotone_lower_bound", "monotone functional x^2 exp(alpha g) eta"
    c, v = profile.grid.centers, profile.values
    sl = _support(v, floor)
    inner = v[sl]
    if inner.size == 0:
        return CheckResult(name, anchor, "bound", 0.0, 0.0, tol, False, note="profile has no support")
    positive = bool(np.all(inner > 0.0))
    # work with log h to avoid overflow of exp(alpha g)
    with np.errstate(divide="ignore", invalid="ignore"):
        logh = 2.0 * np.log(c[sl]) + K.alpha * g_function(profile, K, c[sl]) + np.log(inner)
    steps = np.diff(logh)
    dips = -np.expm1(steps)  # relative decrease (h_i - h_{i+1}) / h_i
    dips = dips[np.isfinite(dips)]
    worst = float(np.max(dips)) if dips.size else 0.0
    passed = positive and worst <= tol
    note = "" if positive else "zero or negative cell inside the support"
    return CheckResult(name, anchor, "bound", worst, 0.0, tol, passed, note,
                       {"positive": positive, "support": [sl.start, sl.stop]})


def check_positivity(profile: DensityField, floor: float = 1e-12) -> CheckResult:
    """Strict positivity on the cells between the first and last above ``floor * max``."""
    sl = _support(profile.values, floor)
    inner = profile.values[sl]
    n_bad = int(np.sum(inner <= 0.0))
    return CheckResult("positivity", "strict positivity on the support", "bound",
                       float(np.min(inner)) if inner.size else 0.0, 0.0, 0.0,
                       inner.size > 0 and n_bad == 0, details={"nonpositive_cells": n_bad})


def check_nonnegative(profile: DensityField) -> CheckResult:
    neg = profile.values < 0.0
    return CheckResult("nonnegative", "nonnegativity", "bound", float(np.min(profile.values)), 0.0, 0.0,
                       not bool(np.any(neg)), details={"negative_cells": int(np.sum(neg))})


def tail_fractions(profile: DensityField, K: CollisionKernel) -> dict[str, float]:
    """Share of ``M_{1+lambda2}`` in the top decade and of ``M_{lambda1}`` in the bottom decade."""
    g = profile.grid
    c, w, v = g.centers, g.widths, np.abs(profile.values)
    top = c >= g.xmax / 10.0
    bottom = c <= g.xmin * 10.0
    hi = c ** (1.0 + K.lambda2) * w * v
    lo = c**K.lambda1 * w * v
    frac = lambda part, whole: float(part.sum() / whole.sum()) if whole.sum() > 0 else 0.0  # noqa: E731
    return {"upper": frac(hi[top], hi), "lower": frac(lo[bottom], lo)}


def check_pointwise_form(profile: DensityField, K: CollisionKernel, law: BreakageLaw,
                         tol: float | None = None, divergence_threshold: float = 0.1) -> CheckResult:
    """Compare ``x^2 eta(x)`` with the mass released into ``(0, x)`` by collisions of larger particles.

    The right side is ``alpha int_x^inf B(x/y) y freq(y) eta(y) dy`` with the
    mass cdf ``B``; the cell containing ``x`` contributes its upper half.
    The residual is measured in ``L^1(dx/x)`` relative to the left side.
    Default tolerance is the largest log-width of the grid.
    """
    name, anchor = "pointwise_form", "pointwise form of the profile equation"
    failed = _mass_precondition(profile, name, anchor)
    if failed:
        return failed
    g = profile.grid
    c, w, e = g.centers, g.widths, g.edges
    tol = float(np.max(g.log_widths)) if tol is None else tol
    released = c * collision_frequency(profile, K) * profile.values * w
    ratio = np.minimum(c[:, None] / c[None, :], 1.0)
    upper = c[None, :] > c[:, None]
    table = np.where(upper, law.mass_cdf(ratio), 0.0)
    upper_half = (e[1:] - c) / w
    rhs = K.alpha * (table @ released + upper_half * released)
    lhs = c**2 * profile.values
    denom = float(np.sum(w * lhs / c))
    residual = float(np.sum(w * np.abs(lhs - rhs) / c) / denom) if denom > 0 else math.inf
    tails = tail_fractions(profile, K)
    diverging = max(tails.values()) > divergence_threshold
    note = "divergence indicator: moment mass concentrated at the grid ends" if diverging else ""
    return CheckResult(name, anchor, "equality", residual, 0.0, tol, bool(residual <= tol and not diverging),
                       note, {"divergence": diverging, **tails})


def _centred_derivative(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Second-order three-point derivative on a nonuniform mesh (interior points)."""
    h1 = t[1:-1] - t[:-2]
    h2 = t[2:] - t[1:-1]
    return (-h2 / (h1 * (h1 + h2)) * y[:-2] + (h2 - h1) / (h1 * h2) * y[1:-1] + h1 / (h2 * (h1 + h2)) * y[2:])


def moment_ode_rhs(history_moment, k: float, K: CollisionKernel, law: BreakageLaw):
    """``(k-1) M_k - alpha Xi_k L_k`` and its scale, from a moment lookup ``history_moment(order)``."""
    l1, l2 = K.lambda1, K.lambda2
    Mk = history_moment(k)
    Lk = history_moment(k + l1) * history_moment(l2) + history_moment(k + l2) * history_moment(l1)
    coll = K.alpha * xi(law, k) * Lk
    return (k - 1.0) * Mk - coll, np.abs((k - 1.0) * Mk) + np.abs(coll)


def check_moment_ode(trajectory: EvolutionState, k: float, K: CollisionKernel, law: BreakageLaw,
                     tol: float = 1e-2) -> CheckResult:
    """Finite-difference ``dM_k/dtau`` against the moment balance along a rescaled run.

    The residual is the largest pointwise mismatch divided by the largest
    magnitude of the two terms on the right over the trajectory.
    """
    name, anchor = f"moment_ode_k{k:g}", "moment balance along the rescaled flow"
    hist = trajectory.history
    if len(hist) < 3:
        raise DomainError("moment check needs at least three recorded times")

    def series(order: float) -> np.ndarray:
        key = moment_key(order)
        if key not in hist[0]:
            raise DomainError(f"trajectory does not record the moment of order {order:g}")
        return np.array([row[key] for row in hist])

    t = np.array([row["time"] for row in hist])
    rhs, scale = moment_ode_rhs(series, k, K, law)
    fd = _centred_derivative(t, series(k))
    mismatch = np.abs(fd - rhs[1:-1])
    top = float(np.max(scale))
    residual = float(np.max(mismatch) / top) if top > 0 else float(np.max(mismatch))
    return _equality(name, anchor, residual, tol, k=k, samples=len(hist))


def check_derivative_bound(profile: DensityField, K: CollisionKernel, law: BreakageLaw,
                           tol: float = BOUND_SLACK) -> CheckResult:
    """``int x^2 |eta'| dx <= 2 (alpha L_1 + 1)`` with a centred-difference derivative."""
    name, anchor = "derivative_bound", "weighted derivative bound"
    g = profile.grid
    c = g.centers
    if not np.any(profile.values):
        return _bound(name, anchor, 0.0, 2.0, tol)
    failed = _mass_precondition(profile, name, anchor)
    if failed:
        return failed
    d = np.gradient(profile.values, c) if g.n > 1 else np.zeros(1)
    value = float(np.sum(c**2 * np.abs(d) * g.widths))
    L1 = ProfileFunctionals.from_profile(profile, K, law).L1
    return _bound(name, anchor, value, 2.0 * (K.alpha * L1 + 1.0), tol)


def check_weak_form(profile: DensityField, K: CollisionKernel, law: BreakageLaw,
                    test_family: Sequence[float] = DEFAULT_TEST_EXPONENTS,
                    R: RedistributionTable | None = None,
                    tol: float | None = None) -> list[CheckResult]:
    """Weak profile equation for monomial tests ``x^k``.

    Left: ``int (x^k - k x^k) eta = (1 - k) M_k``. Right: ``alpha int x^k N_h(eta)``.
    ``k = 1`` is an exact conservation statement and uses tolerance 1e-12;
    other orders default to ``max(1, k - 1)`` times the largest log-width.
    """
    R = R if R is not None else build_redistribution(profile.grid, law)
    g = profile.grid
    c, w = g.centers, g.widths
    parts = collision_parts(profile, K, R)
    results = []
    hmax = float(np.max(g.log_widths))
    for k in test_family:
        k = float(k)
        lhs = (1.0 - k) * moment(profile, k)
        rhs = K.alpha * float(np.sum(c**k * w * (parts.gain.values - parts.loss.values)))
        scale = K.alpha * float(np.sum(c**k * w * parts.loss.values))
        big = max(abs(lhs), abs(rhs))
        denom = big if big > 1e-12 * scale else scale
        residual = abs(lhs - rhs) / denom if denom > 0 else 0.0
        if k == 1.0:
            ktol = 1e-12
        else:
            ktol = max(1.0, k - 1.0) * hmax if tol is None else tol
        results.append(_equality(f"weak_form_k{k:g}", "weak profile equation with monomial tests",
                                 residual, ktol, lhs=lhs, rhs=rhs))
    return results


def verify_profile(profile: DensityField, K: CollisionKernel, law: BreakageLaw,
                   R: RedistributionTable | None = None, tol: float | None = None,
                   test_family: Sequence[float] = DEFAULT_TEST_EXPONENTS) -> VerificationReport:
    """Run every profile check. ``tol`` overrides the equality tolerances."""
    report = VerificationReport(parameters={
        "lambda1": K.lambda1, "lambda2": K.lambda2, "k0": K.k0, "cells": profile.grid.n,
        "xmin": profile.grid.xmin, "xmax": profile.grid.xmax,
    })
    report.checks.append(check_nonnegative(profile))
    report.checks.append(check_l1_identity(profile, K, law, tol=tol))
    report.extend(check_moment_bounds(profile, K, law))
    report.checks.append(check_sup_bound(profile, K, law))
    report.checks.append(check_monotone_lower_bound(profile, K))
    report.checks.append(check_positivity(profile))
    report.checks.append(check_pointwise_form(profile, K, law, tol=tol))
    report.checks.append(check_derivative_bound(profile, K, law))
    report.extend(check_weak_form(profile, K, law, test_family, R=R, tol=tol))
    return report
