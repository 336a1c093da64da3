"""Collision kernels and breakage laws for collision-induced fragmentation.

A collision between particles of sizes x and y occurs at rate

    Psi(x, y) = x**l1 * y**l2 + x**l2 * y**l1,

and each partner breaks independently with the self-similar daughter law
(1/x) * beta(z/x) on (0, x), where ``beta`` is normalised so that
``int_0^1 z beta(z) dz = 1`` (no mass transfer between partners).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import DomainError
from .quadrature import PanelRule, integrate_partial, panel_rule

# smallest ratio of adjacent near-origin panel integrals accepted as integrable
# (local exponent p > -1 + 1.4e-3)
_MIN_PANEL_RATIO = 1.001


@dataclass(frozen=True)
class CollisionKernel:
    """Homogeneous kernel ``x**l1 y**l2 + x**l2 y**l1`` of degree ``l1 + l2``."""

    lambda1: float
    lambda2: float
    k0: float = 0.0

    def __post_init__(self) -> None:
        l1, l2, k0 = self.lambda1, self.lambda2, self.k0
        if not 0.0 <= k0 < 1.0:
            raise DomainError(f"k0 must lie in [0, 1), got {k0}")
        if not k0 <= l1 <= l2 <= 1.0:
            raise DomainError(
                f"need k0 <= lambda1 <= lambda2 <= 1, got k0={k0}, "
                f"lambda1={l1}, lambda2={l2}"
            )
        if not 1.0 < l1 + l2 <= 2.0:
            raise DomainError(
                f"lambda := lambda1 + lambda2 must lie in (1, 2], got {l1 + l2}"
            )

    @property
    def degree(self) -> float:
        return self.lambda1 + self.lambda2

    @property
    def alpha(self) -> float:
        return self.lambda1 + self.lambda2 - 1.0

    def __call__(self, x, y):
        return eval_kernel(self, x, y)


def eval_kernel(K: CollisionKernel, x, y):
    """Collision rate for sizes ``x`` and ``y`` (broadcasts over arrays)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise DomainError("collision kernel needs strictly positive sizes")
    out = x**K.lambda1 * y**K.lambda2 + x**K.lambda2 * y**K.lambda1
    return float(out) if out.ndim == 0 else out


def _bump(r: np.ndarray) -> np.ndarray:
    # 35/32 (1 - r^2)^3 on (-1, 1): even, unit mass, C^2 at the support ends
    r = np.asarray(r, dtype=float)
    return np.where(np.abs(r) < 1.0, (35.0 / 32.0) * (1.0 - r * r) ** 3, 0.0)


class BreakageLaw:
    """Daughter profile ``beta`` on (0, 1) with ``int z beta = 1``.

    Subclasses provide :meth:`density`; moments, the mass cdf and the
    logarithmic moment fall back to composite quadrature.
    """

    #: interior points where ``beta`` has kinks or support ends
    breakpoints: tuple[float, ...] = ()

    def density(self, z):
        raise NotImplementedError

    def __call__(self, z):
        return self.density(z)

    @cached_property
    def _rule(self) -> PanelRule:
        return panel_rule(self.breakpoints)

    @cached_property
    def _moment_cache(self) -> dict[float, float]:
        return {}

    def _zbeta(self, z: np.ndarray) -> np.ndarray:
        return z * self.density(z)

    def moment(self, k: float) -> float:
        """``int_0^1 z**k beta(z) dz``."""
        k = float(k)
        cache = self._moment_cache
        if k not in cache:
            cache[k] = self._moment(k)
        return cache[k]

    def _moment(self, k: float) -> float:
        return self.moment_by_quadrature(k)

    def moment_by_quadrature(self, k: float) -> float:
        parts = self._rule.panel_integrals(lambda z: z**k * self.density(z))
        return _checked_sum(parts, f"z^{k} beta(z)")

    def mass_cdf(self, s):
        """Mass fraction of fragments with relative size below ``s``."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
        rule = self._rule
        cum = np.concatenate([[0.0], np.cumsum(rule.panel_integrals(self._zbeta))])
        idx = np.clip(np.searchsorted(rule.edges, s, side="right") - 1, 0, len(rule.edges) - 2)
        left = rule.edges[idx]
        partial = integrate_partial(self._zbeta, left, np.maximum(s, left))
        out = np.where(s >= 1.0, cum[-1], cum[idx] + partial)
        out = np.where(s <= rule.edges[0], 0.0, out)
        return float(out) if out.ndim == 0 else out

    def e_beta(self) -> float:
        """Mass-weighted logarithmic moment ``int z beta(z) |ln z| dz``."""
        parts = self._rule.panel_integrals(lambda z: -np.log(z) * self._zbeta(z))
        return _checked_sum(parts, "z beta(z) |ln z|")


def _checked_sum(parts: np.ndarray, what: str) -> float:
    """Sum geometric-panel integrals and add the power-law tail on (0, first edge).

    Panels near 0 halve in width, so consecutive panel integrals of a local
    power ``z**p`` have ratio ``q = 2**(p+1)``; the neglected tail is then
    ``parts[0] / (q - 1)``. ``q <= 1`` means ``p <= -1``: not integrable.
    """
    if not np.all(np.isfinite(parts)):
        raise DomainError(f"integral of {what} is not finite")
    tail = 0.0
    if parts[0] != 0.0:
        q = parts[1] / parts[0]
        if not q > _MIN_PANEL_RATIO:
            raise DomainError(f"integral of {what} diverges at z = 0")
        tail = parts[0] / (q - 1.0)
    return math.fsum(parts) + tail


class PowerLaw(BreakageLaw):
    """``beta(z) = (nu + 2) z**nu`` with ``nu`` in (-1, 0]."""

    def __init__(self, nu: float):
        nu = float(nu)
        if not -1.0 < nu <= 0.0:
            raise DomainError(
                f"power-law exponent nu must lie in (-1, 0] so that the number "
                f"of fragments is finite, got {nu}"
            )
        self.nu = nu

    def __repr__(self) -> str:
        return f"PowerLaw(nu={self.nu!r})"

    def density(self, z):
        z = np.asarray(z, dtype=float)
        inside = (z > 0.0) & (z < 1.0)
        zz = np.where(inside, z, 0.5)
        out = np.where(inside, (self.nu + 2.0) * zz**self.nu, 0.0)
        return float(out) if out.ndim == 0 else out

    def _moment(self, k: float) -> float:
        if self.nu + k + 1.0 <= 0.0:
            raise DomainError(
                f"int z^{k} beta diverges for nu={self.nu} (need k > {-1 - self.nu})"
            )
        return (self.nu + 2.0) / (self.nu + k + 1.0)

    def mass_cdf(self, s):
        s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
        out = s ** (self.nu + 2.0)
        return float(out) if out.ndim == 0 else out

    def e_beta(self) -> float:
        return 1.0 / (self.nu + 2.0)


class Tabulated(BreakageLaw):
    """Piecewise-linear ``beta`` through ``(nodes, values)``.

    The profile is held constant outside the node range and rescaled at
    construction so that ``int z beta = 1``.
    """

    def __init__(self, nodes, values):
        nodes = np.asarray(nodes, dtype=float)
        values = np.asarray(values, dtype=float)
        if nodes.ndim != 1 or nodes.shape != values.shape or nodes.size < 2:
            raise DomainError("tabulated law needs matching 1-d nodes and values (>= 2)")
        if np.any(nodes <= 0.0) or np.any(nodes >= 1.0) or np.any(np.diff(nodes) <= 0.0):
            raise DomainError("tabulated nodes must be strictly increasing inside (0, 1)")
        if np.any(values < 0.0) or not np.all(np.isfinite(values)):
            raise DomainError("tabulated values must be finite and nonnegative")
        self.nodes = nodes
        self.breakpoints = tuple(nodes.tolist())
        self.values = values
        raw_mass = self.moment_by_quadrature(1.0)
        if raw_mass <= 0.0:
            raise DomainError("tabulated law carries no mass")
        self.values = values / raw_mass
        self.scale = 1.0 / raw_mass

    def __repr__(self) -> str:
        return f"Tabulated(<{self.nodes.size} nodes>)"

    def density(self, z):
        z = np.asarray(z, dtype=float)
        out = np.where((z > 0.0) & (z < 1.0), np.interp(z, self.nodes, self.values), 0.0)
        return float(out) if out.ndim == 0 else out

    @classmethod
    def from_csv(cls, path: str | Path) -> "Tabulated":
        """Read a two-column ``z, beta`` CSV (an optional header row is skipped)."""
        zs, bs = [], []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith("#"):
                    continue
                try:
                    z, b = float(row[0]), float(row[1])
                except ValueError:
                    if zs:
                        raise DomainError(f"malformed row in {path}: {row}") from None
                    continue
                zs.append(z)
                bs.append(b)
        return cls(zs, bs)


class Mollified(BreakageLaw):
    """Smoothed law ``(1/Phi) int_delta^1 phi_delta(z - w) beta(w) dw``.

    ``phi_delta(r) = phi(r / delta**2) / delta**2`` with the polynomial bump
    ``phi(r) = 35/32 (1 - r^2)^3``; ``Phi`` restores unit mass.
    """

    _INNER_ORDER = 40

    def __init__(self, base: BreakageLaw, delta: float):
        delta = float(delta)
        if not 0.0 < delta < 1.0:
            raise DomainError(f"mollifier width delta must lie in (0, 1), got {delta}")
        self.base = base
        self.delta = delta
        self.width = delta * delta
        w = self.width
        pts = {delta - w, delta + w, 1.0 - w}
        for b in base.breakpoints:
            pts.update((b - w, b + w))
        self.breakpoints = tuple(sorted(p for p in pts if 0.0 < p < 1.0))
        self.normalizer = 1.0
        self.normalizer = self.moment_by_quadrature(1.0)
        if self.normalizer <= 0.0:
            raise DomainError("mollified law carries no mass")
        self._moment_cache.clear()

    def __repr__(self) -> str:
        return f"Mollified({self.base!r}, delta={self.delta!r})"

    @property
    def phi_delta(self) -> float:
        """Normalising constant Phi_delta (tends to 1 as delta -> 0)."""
        return self.normalizer

    def _smoothed(self, z: np.ndarray) -> np.ndarray:
        w = self.width
        lo = np.maximum(self.delta, z - w)
        hi = np.minimum(1.0, z + w)
        hi = np.maximum(hi, lo)

        def integrand(ws):
            return _bump((z[..., None] - ws) / w) / w * self.base.density(ws)

        return integrate_partial(integrand, lo, hi, order=self._INNER_ORDER)

    def density(self, z):
        z = np.asarray(z, dtype=float)
        flat = np.atleast_1d(z)
        inside = (flat > 0.0) & (flat < 1.0)
        out = np.zeros_like(flat)
        if np.any(inside):
            out[inside] = self._smoothed(flat[inside]) / self.normalizer
        out = out.reshape(z.shape)
        return float(out) if out.ndim == 0 else out


def beta_moment(B: BreakageLaw, k: float) -> float:
    return B.moment(k)


def xi(B: BreakageLaw, k: float) -> float:
    """``1 - int z**k beta``; positive exactly when ``k > 1``."""
    return 1.0 - B.moment(k)


def e_beta(B: BreakageLaw) -> float:
    return B.e_beta()


def eval_daughter(B: BreakageLaw, z, x, y):
    """Fragment density ``f(z, x, y)`` for a collision of sizes ``x`` and ``y``."""
    z = np.asarray(z, dtype=float)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise DomainError("colliding sizes must be positive")
    out = B.density(z / x) / x + B.density(z / y) / y
    return float(out) if np.ndim(out) == 0 else out


def mollify(B: BreakageLaw, delta: float) -> Mollified:
    return Mollified(B, delta)


def breakage_from_config(block: Mapping[str, Any], base_dir: Path | None = None) -> BreakageLaw:
    """Build a law from ``{"variant": ..., <params>, "mollify_delta": ...}``."""
    block = dict(block)
    variant = block.pop("variant", None)
    delta = block.pop("mollify_delta", None)
    if variant == "power_law":
        _require_keys(block, {"nu"}, variant)
        law: BreakageLaw = PowerLaw(block["nu"])
    elif variant == "tabulated":
        if "csv" in block:
            _require_keys(block, {"csv"}, variant)
            path = Path(block["csv"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            law = Tabulated.from_csv(path)
        else:
            _require_keys(block, {"nodes", "values"}, variant)
            law = Tabulated(block["nodes"], block["values"])
    else:
        raise DomainError(f"unknown breakage variant {variant!r} (power_law | tabulated)")
    if delta is not None:
        law = Mollified(law, delta)
    return law


def _require_keys(block: Mapping[str, Any], keys: set[str], variant: str) -> None:
    missing = keys - set(block)
    extra = set(block) - keys
    if missing:
        raise DomainError(f"breakage variant {variant!r} is missing {sorted(missing)}")
    if extra:
        raise DomainError(f"breakage variant {variant!r} got unknown keys {sorted(extra)}")
