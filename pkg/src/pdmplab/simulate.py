"""Exact event-driven simulation and occupation estimators.

Random numbers come from numpy's ``Philox`` counter-based generator keyed by
``SeedSequence(seed)``. Holding times are drawn with
``Generator.standard_exponential`` and divided by the current switch rate.
Positions between switches use the closed-form flow, so a log is exact up to
float64 rounding. Uniform sampling times inside intervals use the child
stream ``SeedSequence(seed, spawn_key=(1,))``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numba
import numpy as np

from pdmplab.core import HybridState, SwitchingParams
from pdmplab.geometry import in_support
from pdmplab.gridfield import GridField

DEFAULT_CHUNK = 1_000_000


class InsufficientDataError(ValueError):
    pass


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    key = () if stream == 0 else (stream,)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def chain_seeds(seed: int, n: int) -> list[int]:
    """Independent child seeds for parallel chains."""
    return [int(s.generate_state(1, np.uint64)[0] >> np.uint64(1))
            for s in np.random.SeedSequence(seed).spawn(n)]


@numba.njit(cache=True)
def _advance(x1, x2, r0, gaps, alpha, beta, out):
    out[0, 0] = x1
    out[0, 1] = x2
    r = r0
    for k in range(gaps.shape[0]):
        d1 = np.exp(-alpha * gaps[k])
        d2 = np.exp(-beta * gaps[k])
        x1 = r + (x1 - r) * d1
        x2 = r + (x2 - r) * d2
        out[k + 1, 0] = x1
        out[k + 1, 1] = x2
        r = 1 - r


@dataclass
class EventLog:
    """Jump chain of a trajectory.

    Row ``k`` holds the time of the ``k``-th switch, the position there and
    the regime entered; row 0 is the initial state. ``gaps[k]`` is the
    holding time in ``regimes[k]``.
    """

    params: SwitchingParams
    seed: int
    times: np.ndarray
    positions: np.ndarray
    regimes: np.ndarray
    gaps: np.ndarray

    @property
    def total_time(self) -> float:
        return float(self.times[-1])

    @property
    def n_events(self) -> int:
        return self.gaps.size

    def replay(self) -> np.ndarray:
        out = np.empty_like(self.positions)
        _advance(self.positions[0, 0], self.positions[0, 1], int(self.regimes[0]),
                 self.gaps, self.params.alpha, self.params.beta, out)
        return out

    def intervals(self, burn_in: float = 0.0):
        """Start points, durations, regimes and start times of post-burn-in pieces."""
        start = self.times[:-1]
        end = self.times[1:]
        keep = end > burn_in
        x0 = self.positions[:-1][keep]
        gaps = self.gaps[keep]
        reg = self.regimes[:-1][keep].astype(np.int64)
        t0 = start[keep]
        if keep.any() and t0[0] < burn_in:
            cut = burn_in - t0[0]
            r = reg[0]
            x0 = x0.copy()
            gaps = gaps.copy()
            x0[0] = r + (x0[0] - r) * np.exp(-self.params.rates * cut)
            gaps[0] -= cut
            t0 = t0.copy()
            t0[0] = burn_in
        return x0, gaps, reg, t0

    def to_csv(self, path=None, provenance: dict | None = None) -> str:
        buf = io.StringIO()
        for key, val in (provenance or {}).items():
            buf.write(f"# {key}: {val}\n")
        buf.write("time,x1,x2,regime\n")
        np.savetxt(buf, np.column_stack([self.times, self.positions]),
                   delimiter=",", fmt="%.17g", newline="\n",
                   header="", comments="")
        lines = buf.getvalue().splitlines()
        head = [ln for ln in lines if ln.startswith("#") or ln.startswith("time")]
        body = lines[len(head):]
        text = "\n".join(head + [f"{row},{int(r)}" for row, r in zip(body, self.regimes)]) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text, params: SwitchingParams, seed: int = -1) -> "EventLog":
        text = str(path_or_text)
        if "\n" not in text:
            text = Path(text).read_text()
        rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")][1:]
        data = np.loadtxt(io.StringIO("\n".join(rows)), delimiter=",", ndmin=2)
        times = data[:, 0]
        return cls(params, seed, times, data[:, 1:3].copy(), data[:, 3].astype(np.int8),
                   np.diff(times))


def iter_simulation(p: SwitchingParams, initial: HybridState | None, n_events: int, seed: int,
                    chunk_size: int = DEFAULT_CHUNK) -> Iterator[EventLog]:
    """Yield consecutive pieces of one trajectory; piece ``k+1`` starts at the last row of piece ``k``."""
    if n_events < 1:
        raise ValueError("n_events must be at least 1")
    initial = initial or HybridState((0.5, 0.5), 0)
    rng = make_rng(seed)
    x = np.array(initial.x, dtype=float)
    r = initial.regime
    t = 0.0
    done = 0
    rates = np.array([p.lambda0, p.lambda1])
    while done < n_events:
        m = min(chunk_size, n_events - done)
        regimes = ((np.arange(m + 1) + r) % 2).astype(np.int8)
        gaps = rng.standard_exponential(m) / rates[regimes[:-1]]
        positions = np.empty((m + 1, 2))
        _advance(x[0], x[1], r, gaps, p.alpha, p.beta, positions)
        times = np.empty(m + 1)
        times[0] = t
        np.cumsum(gaps, out=times[1:])
        times[1:] += t
        yield EventLog(p, seed, times, positions, regimes, gaps)
        x = positions[-1]
        r = int(regimes[-1])
        t = float(times[-1])
        done += m


def simulate(p: SwitchingParams, initial: HybridState | None = None, n_events: int = 1000,
             seed: int = 0) -> EventLog:
    pieces = list(iter_simulation(p, initial, n_events, seed))
    if len(pieces) == 1:
        return pieces[0]
    return EventLog(
        p, seed,
        np.concatenate([pieces[0].times] + [c.times[1:] for c in pieces[1:]]),
        np.concatenate([pieces[0].positions] + [c.positions[1:] for c in pieces[1:]]),
        np.concatenate([pieces[0].regimes] + [c.regimes[1:] for c in pieces[1:]]),
        np.concatenate([c.gaps for c in pieces]),
    )


def write_event_csv(pieces, path, provenance: dict | None = None) -> int:
    """Stream consecutive log pieces to one CSV file; returns the number of rows written."""
    rows = 0
    with open(path, "w") as fh:
        for key, val in (provenance or {}).items():
            fh.write(f"# {key}: {val}\n")
        fh.write("time,x1,x2,regime\n")
        for k, piece in enumerate(_pieces(pieces)):
            lo = 0 if k == 0 else 1
            block = np.column_stack([piece.times[lo:], piece.positions[lo:],
                                     piece.regimes[lo:].astype(float)])
            np.savetxt(fh, block, delimiter=",", fmt=["%.17g", "%.17g", "%.17g", "%d"])
            rows += block.shape[0]
    return rows


def _pieces(log) -> Iterable[EventLog]:
    return [log] if isinstance(log, EventLog) else log


def default_burn_in(p: SwitchingParams) -> float:
    return 50.0 / p.beta


def estimate_occupation(log, grid: int = 256, samples_per_interval: int = 4,
                        burn_in: float | None = None, seed: int | None = None,
                        return_samples_outside: bool = False):
    """Histogram of positions at uniform times inside each post-burn-in interval.

    Each sample carries weight ``duration / K``, so the histogram is unbiased
    for the time-occupation measure for every ``K >= 1``.
    """
    if samples_per_interval < 1:
        raise ValueError("samples_per_interval must be >= 1")
    K = samples_per_interval
    hist = np.zeros((2, grid, grid))
    total = 0.0
    n_outside = 0
    n_samples = 0
    rng = None
    p = None
    for piece in _pieces(log):
        p = piece.params
        b = default_burn_in(p) if burn_in is None else burn_in
        if rng is None:
            rng = make_rng(piece.seed if seed is None else seed, stream=1)
        x0, gaps, reg, _ = piece.intervals(b)
        if gaps.size == 0:
            continue
        u = rng.random((gaps.size, K)) * gaps[:, None]
        r = reg[:, None, None].astype(float)
        pts = r + (x0[:, None, :] - r) * np.exp(-u[..., None] * p.rates)
        w = np.repeat(gaps / K, K)
        pts = pts.reshape(-1, 2)
        regs = np.repeat(reg, K)
        n_samples += pts.shape[0]
        n_outside += int(np.count_nonzero(~in_support(p, pts, tol=1e-9)))
        for i in (0, 1):
            sel = regs == i
            h, _, _ = np.histogram2d(pts[sel, 0], pts[sel, 1], bins=grid,
                                     range=[[0, 1], [0, 1]], weights=w[sel])
            hist[i] += h
        total += gaps.sum()
    if total <= 0:
        raise InsufficientDataError("no post-burn-in time in the log")
    dens = hist / (total / grid ** 2)
    out = GridField("density", dens[0], dens[1],
                    meta={"total_time": total, "samples": n_samples, "outside": n_outside})
    if return_samples_outside:
        return out, n_outside
    return out


@numba.njit(cache=True)
def _cell_times(x0, gaps, reg, alpha, beta, n, out):
    """Exact time spent in each of ``n x n`` cells of the unit square."""
    rates = (alpha, beta)
    ta = np.empty(n + 2)
    tb = np.empty(n + 2)
    for k in range(gaps.shape[0]):
        r = reg[k]
        tau = gaps[k]
        a = (x0[k, 0], x0[k, 1])
        counts = [0, 0]
        for d in range(2):
            buf = ta if d == 0 else tb
            c = rates[d]
            dist = abs(a[d] - r)
            m = 0
            if dist > 0:
                end = r + (a[d] - r) * np.exp(-c * tau)
                lo = min(a[d], end)
                hi = max(a[d], end)
                j_lo = int(np.floor(lo * n)) + 1
                j_hi = int(np.ceil(hi * n)) - 1
                if r == 0:
                    j = j_hi
                    while j >= j_lo:
                        if j >= 1 and j <= n - 1:
                            buf[m] = np.log(dist / (j / n)) / c
                            m += 1
                        j -= 1
                else:
                    j = j_lo
                    while j <= j_hi:
                        if j >= 1 and j <= n - 1:
                            buf[m] = np.log(dist / (1.0 - j / n)) / c
                            m += 1
                        j += 1
            counts[d] = m
        ia = 0
        ib = 0
        t_prev = 0.0
        while True:
            nxt = tau
            if ia < counts[0] and ta[ia] < nxt:
                nxt = ta[ia]
            if ib < counts[1] and tb[ib] < nxt:
                nxt = tb[ib]
            if nxt > t_prev:
                tm = 0.5 * (t_prev + nxt)
                p1 = r + (a[0] - r) * np.exp(-alpha * tm)
                p2 = r + (a[1] - r) * np.exp(-beta * tm)
                c1 = min(max(int(p1 * n), 0), n - 1)
                c2 = min(max(int(p2 * n), 0), n - 1)
                out[r, c1, c2] += nxt - t_prev
                t_prev = nxt
            if nxt >= tau:
                break
            if ia < counts[0] and ta[ia] <= nxt:
                ia += 1
            if ib < counts[1] and tb[ib] <= nxt:
                ib += 1


def occupation_times(log, grid: int, burn_in: float | None = None) -> tuple[np.ndarray, float]:
    """Exact per-cell occupation time for each regime, plus total time."""
    out = np.zeros((2, grid, grid))
    total = 0.0
    for piece in _pieces(log):
        p = piece.params
        b = default_burn_in(p) if burn_in is None else burn_in
        x0, gaps, reg, _ = piece.intervals(b)
        if gaps.size == 0:
            continue
        _cell_times(np.ascontiguousarray(x0), gaps, reg, p.alpha, p.beta, grid, out)
        total += gaps.sum()
    if total <= 0:
        raise InsufficientDataError("no post-burn-in time in the log")
    return out, total


def empirical_cdf(log, grid: int = 256, burn_in: float | None = None) -> GridField:
    """Time-weighted empirical ``G_i`` at the upper-right node of each cell."""
    occ, total = occupation_times(log, grid, burn_in)
    cdf = np.cumsum(np.cumsum(occ / total, axis=1), axis=2)
    return GridField("cdf", cdf[0], cdf[1], meta={"total_time": total})


def _log_min_sums(v, q):
    """``sum_j log(min(q, v_j))`` for each ``q``."""
    v = np.sort(v)
    logs = np.concatenate([[0.0], np.cumsum(np.log(v))])
    k = np.searchsorted(v, q, side="left")
    return logs[k] + (v.size - k) * np.log(q)


def marginal_cdf(log, coord: int, regime: int, q, burn_in: float | None = None,
                 normalize: bool = True):
    """Exact time-weighted CDF of one coordinate restricted to one regime.

    Along a regime-0 piece a coordinate decays as ``a e^{-c t}``, so the time
    spent below ``q`` is ``(log min(q, a) - log min(q, a e^{-c tau})) / c``.
    Regime-1 pieces are reflected through 1/2 first.
    """
    q = np.asarray(q, dtype=float)
    qq = np.clip(q if regime == 0 else 1.0 - q, 1e-300, None)
    acc = np.zeros_like(qq)
    total = 0.0
    in_regime = 0.0
    for piece in _pieces(log):
        p = piece.params
        c = p.alpha if coord == 0 else p.beta
        b = default_burn_in(p) if burn_in is None else burn_in
        x0, gaps, reg, _ = piece.intervals(b)
        total += gaps.sum()
        sel = reg == regime
        a = x0[sel, coord] if regime == 0 else 1.0 - x0[sel, coord]
        a = np.clip(a, 1e-300, None)
        g = gaps[sel]
        e = np.clip(a * np.exp(-c * g), 1e-300, None)
        in_regime += g.sum()
        acc += (_log_min_sums(a, qq) - _log_min_sums(e, qq)) / c
    if total <= 0:
        raise InsufficientDataError("no post-burn-in time in the log")
    if regime == 1:
        # time with 1 - x below 1 - q is time with x above q
        acc = in_regime - acc
    return acc / (in_regime if normalize else total)


def regime_occupancy(log, burn_in: float | None = None) -> dict:
    """Fraction of post-burn-in time in regime 0 with a batch-means standard error."""
    t0 = []
    tt = []
    for piece in _pieces(log):
        p = piece.params
        b = default_burn_in(p) if burn_in is None else burn_in
        _, gaps, reg, _ = piece.intervals(b)
        t0.append(np.where(reg == 0, gaps, 0.0))
        tt.append(gaps)
    t0 = np.concatenate(t0)
    tt = np.concatenate(tt)
    if tt.sum() <= 0:
        raise InsufficientDataError("no post-burn-in time in the log")
    frac = t0.sum() / tt.sum()
    nb = 100
    m = (t0.size // nb) * nb
    if m < nb * 10:
        raise InsufficientDataError("too few intervals for a batch-means error")
    b0 = t0[:m].reshape(nb, -1).sum(axis=1)
    bt = tt[:m].reshape(nb, -1).sum(axis=1)
    ratios = b0 / bt
    se = ratios.std(ddof=1) / np.sqrt(nb)
    return {"fraction": float(frac), "stderr": float(se),
            "expected": p.mass(0), "total_time": float(tt.sum())}


def coupled_contraction_run(p: SwitchingParams, x, y, n_events: int, seed: int,
                            regime: int = 0) -> np.ndarray:
    """Two trajectories driven by one switching stream.

    Returns rows ``(time, |X_t(x) - X_t(y)|, |r_t|, e^{beta t} |r_t|)`` at
    time 0 and every switch. The second column differences the two simulated
    positions; the others propagate ``r = x - y`` through the shared linear
    part, free of cancellation. The last column factors out ``e^{-beta t}``
    so it does not underflow on long runs.
    """
    log_x = simulate(p, HybridState(tuple(x), regime), n_events, seed)
    pos_y = np.empty_like(log_x.positions)
    _advance(float(y[0]), float(y[1]), regime, log_x.gaps, p.alpha, p.beta, pos_y)
    sep = np.linalg.norm(log_x.positions - pos_y, axis=1)
    elapsed = np.concatenate([[0.0], np.cumsum(log_x.gaps)])
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    scaled = np.linalg.norm(d * np.exp(-np.outer(elapsed, p.rates - p.beta)), axis=1)
    return np.column_stack([log_x.times, sep, scaled * np.exp(-p.beta * elapsed), scaled])
