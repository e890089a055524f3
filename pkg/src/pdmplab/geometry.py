"""The lens-shaped support, its boundary curves and two-switch reachability."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from pdmplab.core import SwitchingParams, flow_cumulative, flow_forward, symmetry_conjugate


class NumericalFailure(RuntimeError):
    pass


class RegionLabel(str, enum.Enum):
    OUTSIDE = "outside"
    BOUNDARY_LEFT = "boundary_left"
    BOUNDARY_RIGHT = "boundary_right"
    CORNER_00 = "corner_00"
    CORNER_11 = "corner_11"
    INTERIOR_LEFT = "interior_left"
    INTERIOR_RIGHT = "interior_right"
    DIAGONAL = "diagonal"

    def mirrored(self) -> "RegionLabel":
        return _MIRROR.get(self, self)


_MIRROR = {
    RegionLabel.BOUNDARY_LEFT: RegionLabel.BOUNDARY_RIGHT,
    RegionLabel.BOUNDARY_RIGHT: RegionLabel.BOUNDARY_LEFT,
    RegionLabel.CORNER_00: RegionLabel.CORNER_11,
    RegionLabel.CORNER_11: RegionLabel.CORNER_00,
    RegionLabel.INTERIOR_LEFT: RegionLabel.INTERIOR_RIGHT,
    RegionLabel.INTERIOR_RIGHT: RegionLabel.INTERIOR_LEFT,
}


def _bounds(p: SwitchingParams, x2):
    """Lower and upper admissible ``x1`` for a given ``x2`` in ``[0, 1]``."""
    x2c = np.clip(x2, 0.0, 1.0)
    return x2c ** p.gamma, 1.0 - (1.0 - x2c) ** p.gamma


def in_support(p: SwitchingParams, x, tol: float = 0.0) -> np.ndarray:
    """Vectorised membership in the closed support, widened by ``tol``."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    lo, hi = _bounds(p, x2)
    return (x2 >= -tol) & (x2 <= 1 + tol) & (x1 >= lo - tol) & (x1 <= hi + tol)


def in_interior(p: SwitchingParams, x, tol: float = 0.0) -> np.ndarray:
    """Vectorised membership in the open support, shrunk by ``tol``."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    lo, hi = _bounds(p, x2)
    return (x2 > tol) & (x2 < 1 - tol) & (x1 > lo + tol) & (x1 < hi - tol)


def classify_point(p: SwitchingParams, x, tol: float = 1e-12) -> RegionLabel:
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    x1, x2 = (float(v) for v in np.asarray(x, dtype=float))
    if abs(x1) <= tol and abs(x2) <= tol:
        return RegionLabel.CORNER_00
    if abs(x1 - 1) <= tol and abs(x2 - 1) <= tol:
        return RegionLabel.CORNER_11
    if not in_support(p, (x1, x2), tol):
        return RegionLabel.OUTSIDE
    lo, hi = _bounds(p, x2)
    if abs(x1 - lo) <= tol:
        return RegionLabel.BOUNDARY_LEFT
    if abs(x1 - hi) <= tol:
        return RegionLabel.BOUNDARY_RIGHT
    if abs(x1 - x2) <= tol:
        return RegionLabel.DIAGONAL
    return RegionLabel.INTERIOR_RIGHT if x1 > x2 else RegionLabel.INTERIOR_LEFT


def boundary_curve(p: SwitchingParams, side: str, t) -> np.ndarray:
    """Left curve is the forward ``u_0`` orbit of ``(1, 1)``; right is its mirror image."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    if side == "left":
        return flow_forward(p, 0, t, (1.0, 1.0))
    if side == "right":
        return symmetry_conjugate(flow_forward(p, 0, t, (1.0, 1.0)))
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def alignment_time(p: SwitchingParams, i: int, x) -> float:
    """Signed backward time at which the ``u_i`` orbit of ``x`` meets the diagonal.

    Solves ``(i - x1) e^{alpha th} = (i - x2) e^{beta th}``.
    """
    x1, x2 = (float(v) for v in np.asarray(x, dtype=float))
    d1, d2 = i - x1, i - x2
    if d1 == 0 and d2 == 0:
        raise ValueError(f"x is the sink of u_{i}; alignment time undefined")
    if d1 == 0 or d2 == 0 or (d1 > 0) != (d2 > 0):
        raise ValueError("orbit never meets the diagonal for this point")
    return float(np.log(d2 / d1) / (p.alpha - p.beta))


def exit_time(p: SwitchingParams, i: int, x, tol: float = 1e-12) -> float:
    """``sup {t >= 0 : Psi_i^t(x) in interior}`` by bisection on membership."""
    x = np.asarray(x, dtype=float)
    if not in_interior(p, x):
        raise ValueError(f"x={tuple(x)} is not in the interior of the support")
    z = x if i == 0 else symmetry_conjugate(x)
    # backward u0 leaves [0,1]^2 through x2 = 1 by this time
    hi = -np.log(z[1]) / p.beta
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if in_interior(p, flow_forward(p, 0, -mid, z)):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ReachabilitySolution:
    """``target = Phi_{second}^{t} o Phi_{first}^{s}(source)``."""

    first: int
    s: float
    t: float
    eta: float

    @property
    def second(self) -> int:
        return 1 - self.first

    def replay(self, p: SwitchingParams, x) -> np.ndarray:
        return flow_cumulative(p, self.second, (self.s, self.t), x)


def _g(p, x, y, eta):
    g = p.gamma
    return 1 - (1 - y[0]) * (1 - y[1]) ** -g * (1 - eta) ** g - x[0] * x[1] ** -g * eta ** g


def _h(p, x, y, eta):
    g = p.gamma
    return 1 - (1 - x[0]) * (1 - x[1]) ** -g * (1 - eta) ** g - y[0] * y[1] ** -g * eta ** g


def reach_two_switch(p: SwitchingParams, x, y, tol: float = 1e-9) -> ReachabilitySolution:
    """Find two durations steering ``x`` to ``y`` inside the open support.

    The switch point ``(w1, eta)`` lies on the ``u_0`` orbit of one endpoint
    and the ``u_1`` orbit of the other. ``g`` locates it when ``u_0`` runs
    first, ``h`` when ``u_1`` runs first.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (in_interior(p, x) and in_interior(p, y)):
        raise ValueError("both points must lie in the interior of the support")
    lo2, hi2 = min(x[1], y[1]), max(x[1], y[1])
    g_end = _g(p, x, y, lo2)
    h_end = _h(p, x, y, hi2)
    if g_end < 0 and h_end < 0:
        raise NumericalFailure(f"no sign change: g={g_end:.3g}, h={h_end:.3g}")
    if g_end >= h_end:
        if g_end == 0:
            eta = lo2
        else:
            eta = brentq(lambda e: _g(p, x, y, e), 0.0, lo2, xtol=1e-15, rtol=1e-15)
        sol = ReachabilitySolution(0, np.log(x[1] / eta) / p.beta,
                                   np.log((1 - eta) / (1 - y[1])) / p.beta, eta)
    else:
        if h_end == 0:
            eta = hi2
        else:
            eta = brentq(lambda e: _h(p, x, y, e), hi2, 1.0, xtol=1e-15, rtol=1e-15)
        sol = ReachabilitySolution(1, np.log((1 - x[1]) / (1 - eta)) / p.beta,
                                   np.log(eta / y[1]) / p.beta, eta)
    sol = ReachabilitySolution(sol.first, max(sol.s, 0.0), max(sol.t, 0.0), sol.eta)
    resid = np.linalg.norm(sol.replay(p, x) - y)
    if resid > tol:
        raise NumericalFailure(f"two-switch replay misses target by {resid:.3g}")
    return sol
