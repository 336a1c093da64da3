"""Composite Gauss-Legendre quadrature on (0, 1) with geometric panels near 0.

Breakage densities may carry an integrable singularity z**nu at the origin,
so panels shrink geometrically towards zero; interior breakpoints (table
nodes, mollifier support ends) start fresh panels so kinks never fall
inside a panel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

GL_ORDER = 20
# 2**-110 ~ 8e-34; callers add the power-law tail below the first panel
N_GEOMETRIC_PANELS = 110


def gauss_legendre(order: int = GL_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [0, 1]."""
    t, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (t + 1.0), 0.5 * w


@dataclass(frozen=True)
class PanelRule:
    """A fixed set of quadrature panels covering (0, upper)."""

    edges: np.ndarray
    nodes: np.ndarray  # shape (panels, order)
    weights: np.ndarray  # shape (panels, order)

    def integrate(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.sum(self.panel_integrals(fn)))

    def panel_integrals(self, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        vals = fn(self.nodes)
        return np.sum(vals * self.weights, axis=1)


def panel_rule(
    breakpoints: Iterable[float] = (),
    upper: float = 1.0,
    order: int = GL_ORDER,
    n_geometric: int = N_GEOMETRIC_PANELS,
    lower: float = 0.0,
) -> PanelRule:
    """Build panels on (lower, upper).

    With ``lower == 0`` the first interior point (smallest breakpoint, or
    ``upper/2``) is refined geometrically down to ``2**-n_geometric`` of
    itself. Breakpoints outside the open interval are ignored.
    """
    pts = sorted({float(b) for b in breakpoints if lower < b < upper})
    if lower == 0.0:
        first = pts[0] if pts else upper
        geo = first * 0.5 ** np.arange(n_geometric, 0, -1)
        e = np.concatenate([geo, pts, [upper]])
    else:
        e = np.asarray([lower, *pts, upper], dtype=float)
    t, w = gauss_legendre(order)
    a, b = e[:-1, None], e[1:, None]
    return PanelRule(edges=e, nodes=a + (b - a) * t, weights=(b - a) * w)


def integrate_partial(
    fn: Callable[[np.ndarray], np.ndarray],
    a: np.ndarray,
    b: np.ndarray,
    order: int = GL_ORDER,
) -> np.ndarray:
    """Vectorised Gauss-Legendre integral of ``fn`` over each [a_i, b_i]."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    t, w = gauss_legendre(order)
    z = a[..., None] + (b - a)[..., None] * t
    return np.sum(fn(z) * w, axis=-1) * (b - a)
