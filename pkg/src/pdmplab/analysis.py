"""Regime classification, singularity scaling fits and distributional oracles."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from pdmplab.core import SwitchingParams
from pdmplab.gridfield import GridField
from pdmplab.simulate import (
    EventLog,
    InsufficientDataError,
    _pieces,
    coupled_contraction_run,
    default_burn_in,
)

CRIT_ORIGIN = "lambda0 == alpha + beta"
CRIT_BOUNDARY = "lambda1 == beta"


def _cmp(a: float, b: float) -> int:
    if math.isclose(a, b, rel_tol=1e-12, abs_tol=0.0):
        return 0
    return -1 if a < b else 1


def _tri(yes: bool, no: bool):
    """Three-valued verdict: True, False or None for an open case."""
    if yes:
        return True
    if no:
        return False
    return None


@dataclass
class RegimeReport:
    """Which boundedness statements about ``rho_0`` hold; ``None`` marks an open case."""

    origin_singular: bool | None
    left_boundary_singular: bool | None
    bounded_interior: bool | None
    bounded_on_gamma0_compacts: bool | None
    bounded_off_left_boundary: bool
    critical_flags: list = field(default_factory=list)
    conjectured_bounded_left_boundary: bool = False
    mirrored: "RegimeReport | None" = None

    def to_json(self) -> dict:
        def enc(v):
            return "open" if v is None else v
        out = {k: enc(v) for k, v in asdict(self).items() if k != "mirrored"}
        if self.mirrored is not None:
            m = self.mirrored.to_json()
            out["rho1"] = {
                "corner_11_singular": m["origin_singular"],
                "right_boundary_singular": m["left_boundary_singular"],
                "bounded_interior": m["bounded_interior"],
                "bounded_on_gamma1_compacts": m["bounded_on_gamma0_compacts"],
                "bounded_off_right_boundary": m["bounded_off_left_boundary"],
                "critical_flags": [c.replace("lambda0", "L0").replace("lambda1", "lambda0")
                                   .replace("L0", "lambda1") for c in m["critical_flags"]],
                "conjectured_bounded_right_boundary": m["conjectured_bounded_left_boundary"],
            }
        return out


def _classify_rho0(p: SwitchingParams) -> RegimeReport:
    c0 = _cmp(p.lambda0, p.alpha + p.beta)
    c1 = _cmp(p.lambda1, p.beta)
    c0b = _cmp(p.lambda0, p.beta)
    crit = []
    if c0 == 0:
        crit.append(CRIT_ORIGIN)
    if c1 == 0:
        crit.append(CRIT_BOUNDARY)
    bounded_all = c0 > 0 and c1 > 0
    return RegimeReport(
        # slow switching along the left boundary also blows up at its endpoint (0,0)
        origin_singular=_tri(c0 < 0 or c1 < 0, bounded_all),
        left_boundary_singular=_tri(c1 < 0, c0b > 0 and c1 > 0),
        bounded_interior=_tri(bounded_all, c0 < 0 or c1 < 0),
        bounded_on_gamma0_compacts=_tri(c0b > 0 and c1 > 0, c1 < 0),
        bounded_off_left_boundary=True,
        critical_flags=crit,
        conjectured_bounded_left_boundary=(c0b <= 0 and c1 > 0),
    )


def classify_regime(p: SwitchingParams) -> RegimeReport:
    """Threshold logic for ``rho_0``, plus the ``rho_1`` picture from the swapped rates."""
    rep = _classify_rho0(p)
    rep.mirrored = _classify_rho0(p.swapped())
    return rep


@dataclass
class ScalingFit:
    epsilons: np.ndarray
    masses: np.ndarray
    counts: np.ndarray
    slope: float
    slope_stderr: float
    intercept: float
    dropped: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"epsilons": self.epsilons.tolist(), "masses": self.masses.tolist(),
                "counts": self.counts.tolist(), "slope": self.slope,
                "slope_stderr": self.slope_stderr, "intercept": self.intercept,
                "dropped": self.dropped}


def default_eps_grid() -> np.ndarray:
    return 0.3 * 2.0 ** -np.arange(8)


def _fit(eps, masses, counts, min_count, dropped) -> ScalingFit:
    eps = np.asarray(eps, dtype=float)
    masses = np.asarray(masses, dtype=float)
    counts = np.asarray(counts)
    keep = (counts >= min_count) & (masses > 0)
    for e in eps[~keep]:
        dropped.append(float(e))
    if dropped:
        warnings.warn(f"dropped {len(dropped)} scale(s) with fewer than {min_count} samples",
                      stacklevel=3)
    if keep.sum() < 3:
        raise InsufficientDataError(f"only {int(keep.sum())} usable scales; need 3")
    res = stats.linregress(np.log(eps[keep]), np.log(masses[keep]))
    return ScalingFit(eps[keep], masses[keep], counts[keep], float(res.slope),
                      float(res.stderr), float(res.intercept), dropped)


def _check_eps(eps_grid):
    eps = default_eps_grid() if eps_grid is None else np.asarray(eps_grid, dtype=float)
    if eps.size < 4:
        raise ValueError("need at least 4 scales")
    if np.any(np.diff(eps) >= 0):
        raise ValueError("eps_grid must be strictly decreasing")
    return eps


def corner_box_masses(log, eps, regime: int = 0, burn_in: float | None = None):
    """Exact occupation of ``[0, e^alpha] x [0, e^beta]`` (or its mirror at ``(1,1)``).

    Returns masses as fractions of total time, and the number of intervals
    entering each box.
    """
    eps = np.asarray(eps, dtype=float)
    acc = np.zeros(eps.size)
    cnt = np.zeros(eps.size, dtype=np.int64)
    total = 0.0
    for piece in _pieces(log):
        p = piece.params
        b = default_burn_in(p) if burn_in is None else burn_in
        x0, gaps, reg, _ = piece.intervals(b)
        total += gaps.sum()
        sel = reg == regime
        a = x0[sel] if regime == 0 else 1.0 - x0[sel]
        a = np.clip(a, 1e-300, None)
        g = gaps[sel]
        for k, e in enumerate(eps):
            # time after which both coordinates sit below the box corner
            t_in = np.maximum(np.maximum(np.log(a[:, 0] / e ** p.alpha) / p.alpha,
                                         np.log(a[:, 1] / e ** p.beta) / p.beta), 0.0)
            dt = np.maximum(g - t_in, 0.0)
            acc[k] += dt.sum()
            cnt[k] += np.count_nonzero(dt)
    if total <= 0:
        raise InsufficientDataError("no post-burn-in time in the log")
    return acc / total, cnt


def corner_mass_scaling(p: SwitchingParams, source, eps_grid=None, regime: int = 0,
                        min_count: int = 100, burn_in: float | None = None) -> ScalingFit:
    """Log-log slope of ``G_0(e^alpha, e^beta)`` against ``e``.

    ``source`` is an event log (or iterable of log pieces) or a CDF
    ``GridField``. For a grid, scales whose box is narrower than two cells
    are dropped.
    """
    eps = _check_eps(eps_grid)
    dropped: list = []
    if isinstance(source, GridField):
        from pdmplab.solver import interpolate_cdf

        cdf = source.to_cdf()
        h = min(cdf.cell_size)
        pts = np.column_stack([eps ** p.alpha, eps ** p.beta])
        if regime == 1:
            # mass of the mirrored box via inclusion-exclusion
            lo = 1.0 - pts
            G = lambda a, b: interpolate_cdf(cdf.values1, np.column_stack([a, b]))
            masses = G(np.ones(eps.size), np.ones(eps.size)) - G(lo[:, 0], np.ones(eps.size)) \
                - G(np.ones(eps.size), lo[:, 1]) + G(lo[:, 0], lo[:, 1])
        else:
            masses = interpolate_cdf(cdf.values0, pts)
        counts = np.where(pts[:, 0] >= 2 * h, min_count, 0)
        return _fit(eps, masses, counts, min_count, dropped)
    masses, counts = corner_box_masses(source, eps, regime, burn_in)
    return _fit(eps, masses, counts, min_count, dropped)


def strip_membership(p: SwitchingParams, x, eps: float, t_lo: float, t_hi: float) -> np.ndarray:
    """Membership in the thin strip along the left boundary over times ``(t_lo, t_hi)``.

    ``x1`` must lie in ``(e^{-alpha t_hi}, e^{-alpha t_lo})`` and ``x2`` in
    ``((1 - eps^beta) x1^{1/gamma}, x1^{1/gamma})``.
    """
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        top = np.where(x1 > 0, x1, np.nan) ** (1.0 / p.gamma)
        ok1 = (x1 > np.exp(-p.alpha * t_hi)) & (x1 < np.exp(-p.alpha * t_lo))
        ok2 = (x2 > (1 - eps ** p.beta) * top) & (x2 < top)
    return ok1 & ok2


def strip_masses(log, eps, t_anchor: float, burn_in: float | None = None):
    """Exact regime-0 occupation of the strips anchored at ``t_anchor``.

    Along ``u_0`` the ratio ``x2 / x1^{1/gamma}`` is constant, so an interval
    either never meets the strip's cross-section or crosses it while ``x1``
    sweeps the window.
    """
    eps = np.asarray(eps, dtype=float)
    acc = np.zeros(eps.size)
    cnt = np.zeros(eps.size, dtype=np.int64)
    total = 0.0
    for piece in _pieces(log):
        p = piece.params
        b = default_burn_in(p) if burn_in is None else burn_in
        x0, gaps, reg, _ = piece.intervals(b)
        total += gaps.sum()
        sel = reg == 0
        a = np.clip(x0[sel], 1e-300, None)
        g = gaps[sel]
        ratio = a[:, 1] / a[:, 0] ** (1.0 / p.gamma)
        for k, e in enumerate(eps):
            w = e ** p.alpha
            hit = (ratio > 1 - e ** p.beta) & (ratio < 1)
            # x1(s) = a1 e^{-alpha s} is inside (e^{-alpha(t+w)}, e^{-alpha t}) for s in (s_lo, s_hi)
            s_lo = np.log(a[hit, 0]) / p.alpha + t_anchor
            s_hi = s_lo + w
            dt = np.clip(np.minimum(s_hi, g[hit]) - np.maximum(s_lo, 0.0), 0.0, None)
            acc[k] += dt.sum()
            cnt[k] += np.count_nonzero(dt)
    if total <= 0:
        raise InsufficientDataError("no post-burn-in time in the log")
    return acc / total, cnt


def boundary_strip_scaling(p: SwitchingParams, log, t_anchor: float = 0.5, eps_grid=None,
                           min_count: int = 100, burn_in: float | None = None) -> ScalingFit:
    eps = _check_eps(eps_grid)
    if t_anchor <= 0:
        raise ValueError("t_anchor must be positive")
    masses, counts = strip_masses(log, eps, t_anchor, burn_in)
    return _fit(eps, masses, counts, min_count, [])


def strip_area(p: SwitchingParams, eps: float, t_anchor: float, n: int = 2 ** 16,
               seed: int = 0) -> float:
    """Scrambled-Sobol estimate of the Lebesgue measure of one strip."""
    x_lo = np.exp(-p.alpha * (t_anchor + eps ** p.alpha))
    x_hi = np.exp(-p.alpha * t_anchor)
    y_hi = x_hi ** (1.0 / p.gamma)
    y_lo = (1 - eps ** p.beta) * x_lo ** (1.0 / p.gamma)
    u = stats.qmc.Sobol(2, scramble=True, seed=seed).random(n)
    pts = np.column_stack([x_lo + u[:, 0] * (x_hi - x_lo), y_lo + u[:, 1] * (y_hi - y_lo)])
    frac = strip_membership(p, pts, eps, t_anchor, t_anchor + eps ** p.alpha).mean()
    return float(frac * (x_hi - x_lo) * (y_hi - y_lo))


def beta_marginal_oracle(p: SwitchingParams, which: str, regime: int):
    """CDF of one coordinate of ``mu_i`` conditioned on regime ``i``."""
    if which not in ("x1", "x2"):
        raise ValueError("which must be 'x1' or 'x2'")
    c = p.alpha if which == "x1" else p.beta
    if regime == 0:
        dist = stats.beta(p.lambda0 / c, p.lambda1 / c + 1)
        return lambda q: dist.cdf(np.asarray(q, dtype=float))
    dist = stats.beta(p.lambda1 / c, p.lambda0 / c + 1)
    return lambda q: dist.sf(1.0 - np.asarray(q, dtype=float))


def ks_distance(sample, oracle, n_points: int = 1001, coord: int = 0, regime: int = 0) -> float:
    """Sup distance between two CDFs on ``n_points`` evenly spaced points of ``[0, 1]``.

    ``sample`` may be a callable, a pair ``(q, F)`` interpolated linearly, or
    a ``GridField`` whose ``(coord, regime)`` marginal is used.
    """
    q = np.linspace(0.0, 1.0, n_points)
    if isinstance(sample, GridField):
        sample = gridfield_marginal(sample, coord, regime)
    if callable(sample):
        fs = np.asarray(sample(q), dtype=float)
    else:
        qs, Fs = sample
        fs = np.interp(q, qs, Fs)
    fo = np.asarray(oracle(q), dtype=float)
    return float(np.max(np.abs(fs - fo)))


def gridfield_marginal(field: GridField, coord: int, regime: int):
    """Normalised marginal CDF of a CDF field as ``(q, F)`` with ``F(0) = 0``."""
    cdf = field.to_cdf()
    v = cdf.values(regime)
    edge = v[:, -1] if coord == 0 else v[-1, :]
    ax = cdf.axes()[coord]
    q = np.concatenate([[cdf.bounds[2 * coord]], ax])
    F = np.concatenate([[0.0], edge]) / edge[-1]
    return q, F


# absolute agreement required between simulated and propagated separations
SEPARATION_ATOL = 4 * np.finfo(float).eps


def wasserstein_decay_check(p: SwitchingParams, pairs, n_events: int = 10_000, seed: int = 0,
                            rtol: float = 1e-12) -> np.ndarray:
    """Coupled separations against the bound ``|x - y| e^{-beta t}``.

    The bound is checked at relative tolerance ``rtol`` on the propagated
    separation, and the simulated positions must reproduce that separation
    to ``SEPARATION_ATOL``. Returns rows ``(pair, t, ratio, bound)`` and
    raises ``AssertionError`` on the first violation.
    """
    rows = []
    for k, (x, y) in enumerate(pairs):
        d0 = float(np.linalg.norm(np.subtract(x, y)))
        run = coupled_contraction_run(p, x, y, n_events, seed + k)
        drift = np.abs(run[:, 1] - run[:, 2])
        if np.any(drift > SEPARATION_ATOL):
            j = int(np.argmax(drift))
            raise AssertionError(f"pair {k}: simulated separation off by {drift[j]:.3g} at t={run[j, 0]:.6g}")
        # |r_t| / (|x - y| e^{-beta t}), evaluated without underflow
        slack = run[:, 3] / d0 if d0 > 0 else np.zeros(run.shape[0])
        bound = np.exp(-p.beta * run[:, 0])
        ratio = slack * bound
        bad = np.nonzero(slack > 1 + rtol)[0]
        if bad.size:
            j = bad[0]
            raise AssertionError(
                f"pair {k}: |r_t| exceeds the bound by a factor {slack[j]:.15g} at t={run[j, 0]:.6g}")
        rows.append(np.column_stack([np.full(run.shape[0], k), run[:, 0], ratio, bound]))
    return np.vstack(rows)
