"""Closed-form flows for the canonical switching pair.

Field ``u_i`` contracts towards the sink ``(i, i)`` at rate ``alpha`` along
the first axis and ``beta`` along the second, with ``alpha > beta > 0``.
Every routine here evaluates exponentials directly; there is no ODE
integration anywhere in the package.

Points are arrays whose last axis has length 2, so all functions broadcast
over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

EXP_LIMIT = 700.0


class FlowOverflowError(OverflowError):
    """An exponential argument exceeded the float64 safe range."""


def _exp(arg):
    arg = np.asarray(arg, dtype=float)
    if arg.size and np.nanmax(np.abs(arg)) > EXP_LIMIT:
        raise FlowOverflowError(
            f"exponential argument {np.nanmax(np.abs(arg)):.4g} exceeds {EXP_LIMIT}"
        )
    return np.exp(arg)


@dataclass(frozen=True)
class SwitchingParams:
    """Contraction rates ``alpha > beta`` and switch rates ``lambda0``, ``lambda1``.

    ``lambda_i`` is the rate of leaving field ``u_i``.
    """

    alpha: float
    beta: float
    lambda0: float
    lambda1: float

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.lambda0, self.lambda1)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("parameters must be finite")
        if not self.beta > 0:
            raise ValueError(f"requires beta > 0, got beta={self.beta}")
        if not self.alpha > self.beta:
            raise ValueError(
                f"requires alpha > beta, got alpha={self.alpha}, beta={self.beta}"
            )
        if not (self.lambda0 > 0 and self.lambda1 > 0):
            raise ValueError("requires lambda0 > 0 and lambda1 > 0")

    @property
    def gamma(self) -> float:
        return self.alpha / self.beta

    @property
    def rates(self) -> np.ndarray:
        """Per-axis contraction rates ``(alpha, beta)``."""
        return np.array([self.alpha, self.beta])

    def switch_rate(self, i: int) -> float:
        return self.lambda0 if i == 0 else self.lambda1

    def mass(self, i: int) -> float:
        """Stationary probability of regime ``i``, ``lambda_{1-i}/(lambda0+lambda1)``."""
        return self.switch_rate(1 - i) / (self.lambda0 + self.lambda1)

    def rate_product(self, i: int, n: int) -> float:
        """Alternating product ``lambda_{1-i} lambda_i ...`` with ``n`` factors."""
        factors = [self.switch_rate(1 - i) if k % 2 == 0 else self.switch_rate(i)
                   for k in range(n)]
        return float(np.prod(factors))

    def rate_vector(self, i: int, n: int) -> np.ndarray:
        """Holding rates paired with durations ``(t_1, ..., t_n)``; ``t_n`` runs in ``u_i``."""
        return np.array([self.switch_rate(i) if (n - 1 - k) % 2 == 0
                         else self.switch_rate(1 - i) for k in range(n)])

    def scaled(self, c: float) -> "SwitchingParams":
        return SwitchingParams(c * self.alpha, c * self.beta,
                               c * self.lambda0, c * self.lambda1)

    def swapped(self) -> "SwitchingParams":
        """Parameters with the two switch rates exchanged."""
        return SwitchingParams(self.alpha, self.beta, self.lambda1, self.lambda0)

    def as_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta,
                "lambda0": self.lambda0, "lambda1": self.lambda1}


@dataclass(frozen=True)
class HybridState:
    x: tuple
    regime: int = 0

    def __post_init__(self):
        if self.regime not in (0, 1):
            raise ValueError(f"regime must be 0 or 1, got {self.regime!r}")
        if len(self.x) != 2:
            raise ValueError("x must be a planar point")
        object.__setattr__(self, "x", (float(self.x[0]), float(self.x[1])))


def as_time_vector(ts: Sequence[float]) -> np.ndarray:
    """Validate durations ``t_1..t_n`` (most recent last)."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if ts.ndim != 1 or ts.size == 0:
        raise ValueError("time vector must be a nonempty 1-d sequence")
    if np.any(ts < 0) or not np.all(np.isfinite(ts)):
        raise ValueError("durations must be finite and nonnegative")
    return ts


def flow_forward(p: SwitchingParams, i: int, t, x) -> np.ndarray:
    """Evaluate ``Phi_i^t(x)``; negative ``t`` gives the inverse flow ``Psi_i^{|t|}``."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)[..., None]
    y = i + (x - i) * _exp(-t * p.rates)
    # exact identity at t = 0, which the sum above can miss by one ulp
    return np.where(t == 0, x, y)


def flow_backward(p: SwitchingParams, i: int, t, x) -> np.ndarray:
    """``Psi_i^t(x) = Phi_i^{-t}(x)``."""
    return flow_forward(p, i, -np.asarray(t, dtype=float), x)


def flow_cumulative(p: SwitchingParams, i: int, ts, x, inverse: bool = False) -> np.ndarray:
    """Alternating composition ``Phi_i^{t_n} o Phi_{1-i}^{t_{n-1}} o ...``.

    The last duration always runs in field ``u_i``. With ``inverse=True`` the
    composition is undone: ``Psi_i^{t_n}`` is applied first, then
    ``Psi_{1-i}^{t_{n-1}}`` and so on back to ``t_1``.
    """
    ts = as_time_vector(ts)
    n = ts.size
    fields = [i if (n - 1 - k) % 2 == 0 else 1 - i for k in range(n)]
    y = np.asarray(x, dtype=float)
    if inverse:
        for k in reversed(range(n)):
            y = flow_forward(p, fields[k], -ts[k], y)
    else:
        for k in range(n):
            y = flow_forward(p, fields[k], ts[k], y)
    return y


def backward_jacobian(p: SwitchingParams, ts) -> float:
    """``det grad_x Psi_i^{(t_1..t_n)}``; independent of ``x`` and ``i`` for linear fields."""
    ts = as_time_vector(ts)
    return float(_exp((p.alpha + p.beta) * ts.sum()))


def det_transversality(p: SwitchingParams, x) -> np.ndarray:
    """Determinant of ``[u_1(x), u_0(x)]``, equal to ``alpha*beta*(x1 - x2)``."""
    x = np.asarray(x, dtype=float)
    return p.alpha * p.beta * (x[..., 0] - x[..., 1])


def symmetry_conjugate(x) -> np.ndarray:
    """Point reflection through ``(1/2, 1/2)``; swaps the two sinks."""
    return 1.0 - np.asarray(x, dtype=float)


def vector_field(p: SwitchingParams, i: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return -p.rates * (x - i)
