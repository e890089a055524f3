"""Deterministic invariant CDFs and densities from the switching integral equations.

Two routes are provided:

* ``cdf_fixed_point`` iterates the one-switch equation for the CDFs on grid
  nodes. Backward orbits leave the unit square, where the CDF of the other
  regime is evaluated at coordinatewise-clamped arguments.
* ``apply_Q2`` / ``q2_fixed_point`` push a density through two backward
  switching segments in the time domain and power-iterate.

Time integrals use composite Gauss-Legendre panels of length
``1 / (4 max(alpha, lambda0, lambda1))`` unless configured otherwise.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numba
import numpy as np

from pdmplab.core import SwitchingParams, backward_jacobian
from pdmplab.geometry import in_interior, in_support
from pdmplab.gridfield import GridField

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residual=None, history=None):
        super().__init__(msg)
        self.residual = residual
        self.history = history or []


class NoSolutionError(ValueError):
    """``y`` is not in the image of the requested two-switch branch."""


class NearDiagonalError(ValueError):
    """Switch point too close to the diagonal for the state-space kernel."""


@dataclass
class SolverConfig:
    grid: int = 256
    nodes_per_unit_time: float | None = None
    gl_order: int = 4
    tol: float = 1e-6
    max_iter: int = 500
    cutoff_eps: float = 1e-3

    def __post_init__(self):
        if self.grid < 2:
            raise ValueError("grid must be at least 2")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not self.cutoff_eps > 0:
            raise ValueError("cutoff_eps must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.gl_order < 1:
            raise ValueError("gl_order must be at least 1")

    def panel_length(self, p: SwitchingParams) -> float:
        if self.nodes_per_unit_time:
            return self.gl_order / self.nodes_per_unit_time
        return 1.0 / (4.0 * max(p.alpha, p.lambda0, p.lambda1))

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc) -> "SolverConfig":
        if isinstance(doc, (str, Path)):
            doc = json.loads(Path(doc).read_text())
        return cls(**doc)


def _gl(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


@numba.njit(cache=True)
def _bilinear_nodes(P, n, u, v):
    """Bilinear interpolation on the padded node grid ``P`` with spacing ``1/n``."""
    u = min(max(u, 0.0), 1.0) * n
    v = min(max(v, 0.0), 1.0) * n
    i = min(int(u), n - 1)
    j = min(int(v), n - 1)
    fu = u - i
    fv = v - j
    return ((1 - fu) * (1 - fv) * P[i, j] + fu * (1 - fv) * P[i + 1, j]
            + (1 - fu) * fv * P[i, j + 1] + fu * fv * P[i + 1, j + 1])


@numba.njit(cache=True)
def _panel_integral(P, n, i, x1, x2, alpha, beta, lam_i, lam_o, a, b, h, gx, gw):
    """``int_a^b lam_o e^{-lam_i t} G(clamp(Psi_i^t x)) dt`` on panels of length ``<= h``."""
    if b <= a:
        return 0.0
    m = int(np.ceil((b - a) / h))
    hp = (b - a) / m
    acc = 0.0
    for k in range(m):
        t0 = a + k * hp
        for q in range(gx.shape[0]):
            t = t0 + gx[q] * hp
            if i == 0:
                u = x1 * np.exp(alpha * t)
                v = x2 * np.exp(beta * t)
            else:
                u = 1.0 - (1.0 - x1) * np.exp(alpha * t)
                v = 1.0 - (1.0 - x2) * np.exp(beta * t)
            acc += gw[q] * hp * lam_o * np.exp(-lam_i * t) * _bilinear_nodes(P, n, u, v)
    return acc


@numba.njit(cache=True)
def _cdf_sweep(G_other, n, i, alpha, beta, lam_i, lam_o, h, gx, gw, out):
    P = np.zeros((n + 1, n + 1))
    P[1:, 1:] = G_other
    total_other = G_other[n - 1, n - 1]
    for k1 in range(n):
        x1 = (k1 + 1) / n
        for k2 in range(n):
            x2 = (k2 + 1) / n
            if i == 0:
                # saturation times where each clamped coordinate reaches 1
                T1 = -np.log(x1) / alpha
                T2 = -np.log(x2) / beta
                ta = min(T1, T2)
                tb = max(T1, T2)
                val = _panel_integral(P, n, 0, x1, x2, alpha, beta, lam_i, lam_o, 0.0, ta, h, gx, gw)
                val += _panel_integral(P, n, 0, x1, x2, alpha, beta, lam_i, lam_o, ta, tb, h, gx, gw)
                val += total_other * lam_o / lam_i * np.exp(-lam_i * tb)
            else:
                # the CDF vanishes once either coordinate drops below 0
                T1 = np.inf if x1 >= 1.0 else -np.log(1.0 - x1) / alpha
                T2 = np.inf if x2 >= 1.0 else -np.log(1.0 - x2) / beta
                ta = min(T1, T2)
                if np.isinf(ta):
                    val = total_other * lam_o / lam_i
                else:
                    val = _panel_integral(P, n, 1, x1, x2, alpha, beta, lam_i, lam_o, 0.0, ta, h, gx, gw)
            out[k1, k2] = val


def interpolate_cdf(values: np.ndarray, pts) -> np.ndarray:
    """Bilinear interpolation of a node-valued CDF on the unit square, zero on the lower edges."""
    n = values.shape[0]
    P = np.zeros((n + 1, n + 1))
    P[1:, 1:] = values
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    return np.array([_bilinear_nodes(P, n, u, v) for u, v in pts])


def support_cell_fraction(p: SwitchingParams, n: int, sub: int = 8) -> np.ndarray:
    """Fraction of each cell of an ``n x n`` grid lying in the support (midpoint sub-sampling)."""
    s = (np.arange(n * sub) + 0.5) / (n * sub)
    pts = np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1)
    inside = in_support(p, pts).astype(float)
    return inside.reshape(n, sub, n, sub).mean(axis=(1, 3))


def uniform_initial(p: SwitchingParams, n: int) -> GridField:
    frac = support_cell_fraction(p, n)
    area = frac.sum() / n ** 2
    d0 = frac * p.mass(0) / area
    d1 = frac * p.mass(1) / area
    return GridField("density", d0, d1)


def _monotone_projection(v: np.ndarray) -> None:
    """Running maximum along both axes, in place.

    Quadrature noise on plateaus can break monotonicity at the 1e-6 level;
    the running maximum is sup-norm non-expansive, so the iteration stays a
    contraction.
    """
    np.maximum.accumulate(v, axis=0, out=v)
    np.maximum.accumulate(v, axis=1, out=v)


def cdf_fixed_point(p: SwitchingParams, cfg: SolverConfig | None = None,
                    initial: GridField | None = None) -> GridField:
    """Gauss-Seidel iteration of the CDF equations with mass pinning.

    The returned field carries ``meta['residuals']`` and the observed
    geometric ratio of the last residuals.
    """
    cfg = cfg or SolverConfig()
    n = cfg.grid
    gx, gw = _gl(cfg.gl_order)
    h = cfg.panel_length(p)
    init = (initial or uniform_initial(p, n)).to_cdf()
    G = [init.values0.copy(), init.values1.copy()]
    lam = (p.lambda0, p.lambda1)
    history = []
    buf = np.empty((n, n))
    for it in range(cfg.max_iter):
        change = 0.0
        for i in (0, 1):
            _cdf_sweep(G[1 - i], n, i, p.alpha, p.beta, lam[i], lam[1 - i], h, gx, gw, buf)
            _monotone_projection(buf)
            buf *= p.mass(i) / buf[-1, -1]
            change = max(change, float(np.max(np.abs(buf - G[i]))))
            G[i] = buf.copy()
        history.append(change)
        log.debug("cdf iteration %d residual %.3e", it, change)
        if change < cfg.tol:
            break
    else:
        raise ConvergenceError(f"no convergence in {cfg.max_iter} iterations "
                               f"(residual {history[-1]:.3e})", history[-1], history)
    ratio = float(np.exp(np.mean(np.diff(np.log(history[-6:]))))) if len(history) > 6 else None
    return GridField("cdf", G[0], G[1], meta={"residuals": history, "iterations": len(history),
                                              "observed_ratio": ratio})


def cdf_residual(p: SwitchingParams, field: GridField, cfg: SolverConfig | None = None) -> float:
    """Sup change produced by one more (pinned) sweep of both equations."""
    cfg = cfg or SolverConfig(grid=field.n1)
    n = field.n1
    gx, gw = _gl(cfg.gl_order)
    h = cfg.panel_length(p)
    lam = (p.lambda0, p.lambda1)
    buf = np.empty((n, n))
    worst = 0.0
    for i in (0, 1):
        _cdf_sweep(field.values(1 - i), n, i, p.alpha, p.beta, lam[i], lam[1 - i], h, gx, gw, buf)
        _monotone_projection(buf)
        buf *= p.mass(i) / buf[-1, -1]
        worst = max(worst, float(np.max(np.abs(buf - field.values(i)))))
    return worst


# ---------------------------------------------------------------- densities

def _center_padded(values: np.ndarray) -> np.ndarray:
    """Cell-centre values padded by one ghost layer of zeros."""
    return np.pad(np.asarray(values, dtype=float), 1)


@numba.njit(cache=True)
def _bilinear_centers(Q, n, u, v):
    """Bilinear interpolation of cell-centre data ``Q`` (padded by one zero layer)."""
    if u < 0.0 or u > 1.0 or v < 0.0 or v > 1.0:
        return 0.0
    fu = u * n + 0.5
    fv = v * n + 0.5
    i = min(int(fu), n)
    j = min(int(fv), n)
    a = fu - i
    b = fv - j
    return ((1 - a) * (1 - b) * Q[i, j] + a * (1 - b) * Q[i + 1, j]
            + (1 - a) * b * Q[i, j + 1] + a * b * Q[i + 1, j + 1])


@numba.njit(cache=True)
def _in_interior(x1, x2, gamma):
    if x2 <= 0.0 or x2 >= 1.0:
        return False
    return x1 > x2 ** gamma and x1 < 1.0 - (1.0 - x2) ** gamma


@numba.njit(cache=True)
def _exit_time(x1, x2, i, alpha, beta, gamma):
    """Backward exit time of ``u_i`` from the open support, by bisection to 1e-13."""
    if i == 1:
        x1 = 1.0 - x1
        x2 = 1.0 - x2
    hi = -np.log(x2) / beta
    lo = 0.0
    while hi - lo > 1e-13:
        mid = 0.5 * (lo + hi)
        if _in_interior(x1 * np.exp(alpha * mid), x2 * np.exp(beta * mid), gamma):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def exit_times(p: SwitchingParams, i: int, x) -> np.ndarray:
    """Vectorised backward exit time; zero for points outside the open support."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.zeros(x.shape[0])
    for k, (a, b) in enumerate(x):
        if _in_interior(a, b, p.gamma):
            out[k] = _exit_time(a, b, i, p.alpha, p.beta, p.gamma)
    return out


def _as_layer(rho) -> np.ndarray:
    if isinstance(rho, GridField):
        raise TypeError("pass one density layer (values0 or values1), not a GridField")
    return np.asarray(rho, dtype=float)


@numba.njit(cache=True)
def _one_switch(Q, n, x1, x2, i, alpha, beta, lam_i, lam_o, T, h, gx, gw):
    if T <= 0:
        return 0.0
    m = int(np.ceil(T / h))
    hp = T / m
    acc = 0.0
    for k in range(m):
        for q in range(gx.shape[0]):
            t = (k + gx[q]) * hp
            if i == 0:
                u = x1 * np.exp(alpha * t)
                v = x2 * np.exp(beta * t)
            else:
                u = 1.0 - (1.0 - x1) * np.exp(alpha * t)
                v = 1.0 - (1.0 - x2) * np.exp(beta * t)
            acc += gw[q] * hp * lam_o * np.exp((alpha + beta - lam_i) * t) * _bilinear_centers(Q, n, u, v)
    return acc


def density_from_one_switch(p: SwitchingParams, rho_other, i: int, x,
                            cfg: SolverConfig | None = None) -> float:
    """``rho_i(x)`` from the density of the other regime via one backward switch."""
    cfg = cfg or SolverConfig()
    x = np.asarray(x, dtype=float)
    if not in_interior(p, x):
        raise ValueError(f"x={tuple(x)} is not in the interior of the support")
    layer = _as_layer(rho_other)
    n = layer.shape[0]
    gx, gw = _gl(cfg.gl_order)
    T = _exit_time(x[0], x[1], i, p.alpha, p.beta, p.gamma)
    return float(_one_switch(_center_padded(layer), n, x[0], x[1], i, p.alpha, p.beta,
                             p.switch_rate(i), p.switch_rate(1 - i), T, cfg.panel_length(p), gx, gw))


def density_from_one_switch_grid(p: SwitchingParams, rho_other, i: int,
                                 cfg: SolverConfig | None = None) -> np.ndarray:
    """``density_from_one_switch`` at every cell centre in the open support (zero elsewhere)."""
    cfg = cfg or SolverConfig()
    layer = _as_layer(rho_other)
    n = layer.shape[0]
    gx, gw = _gl(cfg.gl_order)
    Q = _center_padded(layer)
    c = (np.arange(n) + 0.5) / n
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(n):
            if _in_interior(c[a], c[b], p.gamma):
                T = _exit_time(c[a], c[b], i, p.alpha, p.beta, p.gamma)
                out[a, b] = _one_switch(Q, n, c[a], c[b], i, p.alpha, p.beta, p.switch_rate(i),
                                        p.switch_rate(1 - i), T, cfg.panel_length(p), gx, gw)
    return out


# ------------------------------------------------------- two-switch machinery

@dataclass(frozen=True)
class TwoSwitchTimes:
    s: float
    t: float
    branch: str


def two_switch_backward(p: SwitchingParams, x, s, t) -> np.ndarray:
    """Closed form of ``Psi_0^{(s,t)}(x)``: ``u_0`` backwards for ``t``, then ``u_1`` for ``s``."""
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    y1 = 1 - np.exp(p.alpha * s) + np.exp(p.alpha * (s + t)) * x[..., 0]
    y2 = 1 - np.exp(p.beta * s) + np.exp(p.beta * (s + t)) * x[..., 1]
    return np.stack([y1, y2], axis=-1)


def two_switch_jacobian_det(p: SwitchingParams, x, s, t):
    """``det d/d(s,t) Psi_0^{(s,t)}(x) = alpha beta e^{(alpha+beta)s}(x1 e^{alpha t} - x2 e^{beta t})``."""
    x = np.asarray(x, dtype=float)
    return p.alpha * p.beta * np.exp((p.alpha + p.beta) * s) * (
        x[..., 0] * np.exp(p.alpha * t) - x[..., 1] * np.exp(p.beta * t))


def _side_bracket(p, x, branch):
    """Range of ``t`` on which the backward ``u_0`` orbit of ``x`` is on the requested side."""
    x1, x2 = x[..., 0], x[..., 1]
    theta = np.log(x2 / x1) / (p.alpha - p.beta)
    t_end = np.minimum(-np.log(x1) / p.alpha, -np.log(x2) / p.beta)
    if branch == "right":
        return np.maximum(theta, 0.0), t_end
    return np.zeros_like(theta), np.minimum(np.maximum(theta, 0.0), t_end)


def _match(p, x, y, t):
    """Zero when the backward ``u_0`` point at time ``t`` lies on the forward ``u_1`` orbit through ``y``."""
    z1 = x[..., 0] * np.exp(p.alpha * t)
    z2 = x[..., 1] * np.exp(p.beta * t)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.log1p(-y[..., 0]) - np.log1p(-z1) - p.gamma * (np.log1p(-y[..., 1]) - np.log1p(-z2))


def _newton_uv(p, x, y, u, v, iters=50):
    """Damped Newton for ``1 - u + v x1 = y1``, ``1 - u^{1/g} + v^{1/g} x2 = y2``."""
    g = 1.0 / p.gamma
    x1, x2, y1, y2 = x[..., 0], x[..., 1], y[..., 0], y[..., 1]

    def F(u, v):
        return np.stack([1 - u + v * x1 - y1, 1 - u ** g + v ** g * x2 - y2], axis=-1)

    r = F(u, v)
    for _ in range(iters):
        nr = np.max(np.abs(r), axis=-1)
        if np.all(nr < 1e-15):
            break
        j11 = -np.ones_like(u)
        j12 = x1
        j21 = -g * u ** (g - 1)
        j22 = g * v ** (g - 1) * x2
        det = j11 * j22 - j12 * j21
        with np.errstate(divide="ignore", invalid="ignore"):
            du = (j22 * r[..., 0] - j12 * r[..., 1]) / det
            dv = (-j21 * r[..., 0] + j11 * r[..., 1]) / det
        du = np.where(np.isfinite(du), du, 0.0)
        dv = np.where(np.isfinite(dv), dv, 0.0)
        lam = np.ones_like(u)
        for _ in range(30):
            un = np.maximum(u - lam * du, 1.0)
            vn = np.maximum(v - lam * dv, un)
            rn = F(un, vn)
            worse = np.max(np.abs(rn), axis=-1) > nr
            if not np.any(worse):
                break
            lam = np.where(worse, lam * 0.5, lam)
        u, v, r = un, vn, rn
    return u, v, np.max(np.abs(r), axis=-1)


def invert_two_switch_vec(p: SwitchingParams, x, y, branch: str = "right"):
    """Vectorised inverse of ``(s, t) -> Psi_0^{(s,t)}(x)`` on one branch.

    Returns ``(s, t, ok)``; ``ok`` is False where ``y`` is outside the
    branch image or the polish failed to reach residual 1e-10.
    """
    if branch not in ("right", "left"):
        raise ValueError("branch must be 'right' or 'left'")
    x = np.broadcast_to(np.asarray(x, dtype=float), np.broadcast_shapes(np.shape(x), np.shape(y)))
    y = np.broadcast_to(np.asarray(y, dtype=float), x.shape)
    a, b = _side_bracket(p, x, branch)
    # stay strictly inside the bracket where log1p(-z) is finite
    b_in = np.where(b > a, b - 1e-15 * np.maximum(1.0, b), b)
    fa = _match(p, x, y, a)
    fb = _match(p, x, y, b_in)
    ok = (b > a) & (np.sign(fa) != np.sign(fb)) & np.isfinite(fa)
    exact = fa == 0
    lo, hi = a.copy(), b_in.copy()
    flo = fa
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = _match(p, x, y, mid)
        left = np.sign(fm) == np.sign(flo)
        lo = np.where(left, mid, lo)
        flo = np.where(left, fm, flo)
        hi = np.where(left, hi, mid)
        if np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(hi))):
            break
    t = np.where(exact, a, 0.5 * (lo + hi))
    z1 = x[..., 0] * np.exp(p.alpha * t)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.log((1 - y[..., 0]) / (1 - z1)) / p.alpha
    ok &= s > -1e-12
    s = np.maximum(np.where(ok, s, 0.0), 0.0)
    t = np.where(ok, t, 0.0)
    u, v, res = _newton_uv(p, x, y, np.exp(p.alpha * s), np.exp(p.alpha * (s + t)))
    s_n = np.log(u) / p.alpha
    t_n = np.log(v / u) / p.alpha
    ok &= res < 1e-10
    side = two_switch_intermediate(p, x, t_n)
    d = side[..., 0] - side[..., 1]
    if branch == "right":
        ok &= d >= 0
    else:
        ok &= d <= 0
    return s_n, t_n, ok


def two_switch_intermediate(p: SwitchingParams, x, t) -> np.ndarray:
    """Switch point ``z = Psi_0^t(x)``."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    return np.stack([x[..., 0] * np.exp(p.alpha * t), x[..., 1] * np.exp(p.beta * t)], axis=-1)


def invert_two_switch(p: SwitchingParams, x, y, branch: str = "right",
                      start: tuple[float, float] | None = None) -> TwoSwitchTimes:
    """Recover ``(s, t)`` with ``Psi_0^{(s,t)}(x) = y`` and switch point on ``branch``.

    Without ``start`` the switch time is bracketed on the requested side of
    the diagonal and polished by damped Newton in ``(e^{alpha s},
    e^{alpha (s+t)})``. With ``start`` Newton runs from that guess alone.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.allclose(x, y, rtol=0, atol=1e-15):
        return TwoSwitchTimes(0.0, 0.0, branch)
    if start is None:
        s, t, ok = invert_two_switch_vec(p, x, y, branch)
        if not ok:
            raise NoSolutionError(f"y={tuple(y)} is not reachable on the {branch} branch from x={tuple(x)}")
        return TwoSwitchTimes(float(s), float(t), branch)
    u0 = np.array(np.exp(p.alpha * start[0]))
    v0 = np.array(np.exp(p.alpha * (start[0] + start[1])))
    u, v, res = _newton_uv(p, x, y, u0, v0)
    s, t = float(np.log(u) / p.alpha), float(np.log(v / u) / p.alpha)
    z = two_switch_intermediate(p, x, t)
    right = z[0] >= z[1]
    if res >= 1e-10 or right != (branch == "right"):
        raise NoSolutionError(f"Newton from {start} did not reach the {branch} branch (residual {res:.2e})")
    return TwoSwitchTimes(s, t, branch)


def kernel_from_times(p: SwitchingParams, x, s, t, cutoff_eps: float = 0.0):
    """``lambda0 lambda1 e^{-lambda1 s} e^{(alpha+beta-lambda0) t} / |det U(z)|``."""
    z = two_switch_intermediate(p, x, t)
    det = p.alpha * p.beta * np.abs(z[..., 0] - z[..., 1])
    if np.any(det <= cutoff_eps):
        raise NearDiagonalError(f"|det U(z)| = {np.min(det):.3g} <= cutoff {cutoff_eps}")
    return p.lambda0 * p.lambda1 * np.exp(-p.lambda1 * s) * np.exp(
        (p.alpha + p.beta - p.lambda0) * t) / det


def kernel_two_switch(p: SwitchingParams, x, y, branch: str = "right",
                      cutoff_eps: float = 1e-3) -> float:
    """State-space kernel of the two-switch operator; refuses switch points near the diagonal."""
    ts = invert_two_switch(p, x, y, branch)
    return float(kernel_from_times(p, x, ts.s, ts.t, cutoff_eps))


# ------------------------------------------------------------- Q2 operator

@numba.njit(cache=True)
def _q2_node(Q, n, x1, x2, alpha, beta, gamma, lam0, lam1, h, gx, gw, cut):
    Tt = _exit_time(x1, x2, 0, alpha, beta, gamma)
    Tt = min(Tt, cut / lam0)
    if Tt <= 0:
        return 0.0
    mt = int(np.ceil(Tt / h))
    ht = Tt / mt
    acc = 0.0
    for kt in range(mt):
        for qt in range(gx.shape[0]):
            t = (kt + gx[qt]) * ht
            z1 = x1 * np.exp(alpha * t)
            z2 = x2 * np.exp(beta * t)
            Ts = _exit_time(z1, z2, 1, alpha, beta, gamma)
            Ts = min(Ts, cut / lam1)
            if Ts <= 0:
                continue
            ms = int(np.ceil(Ts / h))
            hs = Ts / ms
            inner = 0.0
            for ks in range(ms):
                for qs in range(gx.shape[0]):
                    s = (ks + gx[qs]) * hs
                    y1 = 1.0 - (1.0 - z1) * np.exp(alpha * s)
                    y2 = 1.0 - (1.0 - z2) * np.exp(beta * s)
                    inner += gw[qs] * hs * np.exp((alpha + beta - lam1) * s) * _bilinear_centers(Q, n, y1, y2)
            acc += gw[qt] * ht * np.exp((alpha + beta - lam0) * t) * inner
    return lam0 * lam1 * acc


@numba.njit(cache=True)
def _q2_grid(Q, n, alpha, beta, gamma, lam0, lam1, h, gx, gw, cut, out):
    for a in range(n):
        x1 = (a + 0.5) / n
        for b in range(n):
            x2 = (b + 0.5) / n
            if _in_interior(x1, x2, gamma):
                out[a, b] = _q2_node(Q, n, x1, x2, alpha, beta, gamma, lam0, lam1, h, gx, gw, cut)
            else:
                out[a, b] = 0.0


# holding-time factors below e^{-cut} are dropped
Q2_TRUNCATION = -np.log(1e-14)


def apply_Q2(p: SwitchingParams, rho0, cfg: SolverConfig | None = None) -> np.ndarray:
    """Two-switch transfer operator applied to a regime-0 density layer at cell centres."""
    cfg = cfg or SolverConfig()
    layer = _as_layer(rho0)
    n = layer.shape[0]
    gx, gw = _gl(cfg.gl_order)
    out = np.empty((n, n))
    _q2_grid(_center_padded(layer), n, p.alpha, p.beta, p.gamma, p.lambda0, p.lambda1,
             cfg.panel_length(p), gx, gw, Q2_TRUNCATION, out)
    return out


def q2_fixed_point(p: SwitchingParams, cfg: SolverConfig | None = None,
                   initial: np.ndarray | None = None) -> GridField:
    """Power iteration of ``apply_Q2`` renormalised to regime-0 mass.

    Stops when the L1 change drops below ``cfg.tol``; the regime-1 layer is
    recovered with one application of the one-switch formula.
    """
    cfg = cfg or SolverConfig()
    n = cfg.grid
    area = 1.0 / n ** 2
    rho = uniform_initial(p, n).values0 if initial is None else np.asarray(initial, dtype=float)
    history = []
    for _ in range(cfg.max_iter):
        new = apply_Q2(p, rho, cfg)
        new *= p.mass(0) / (new.sum() * area)
        change = float(np.abs(new - rho).sum() * area)
        history.append(change)
        rho = new
        if change < cfg.tol:
            break
    else:
        raise ConvergenceError(f"Q2 power iteration did not converge in {cfg.max_iter} steps "
                               f"(residual {history[-1]:.3e})", history[-1], history)
    rho1 = density_from_one_switch_grid(p, rho, 1, cfg)
    rho1 *= p.mass(1) / (rho1.sum() * area)
    return GridField("density", rho, rho1, meta={"residuals": history, "iterations": len(history)})


__all__ = [
    "ConvergenceError", "NearDiagonalError", "NoSolutionError", "SolverConfig", "TwoSwitchTimes",
    "apply_Q2", "backward_jacobian", "cdf_fixed_point", "cdf_residual", "density_from_one_switch",
    "density_from_one_switch_grid", "exit_times", "interpolate_cdf", "invert_two_switch",
    "invert_two_switch_vec", "kernel_from_times", "kernel_two_switch", "q2_fixed_point",
    "two_switch_backward", "two_switch_intermediate", "two_switch_jacobian_det", "uniform_initial",
]
