"""Affine reduction of ``dx/dt = A x + b_{I_t}`` to the canonical pair."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from pdmplab.core import SwitchingParams, flow_forward


class UnsupportedSystemError(ValueError):
    """Drift matrix lacks two distinct negative real eigenvalues, or the reduction degenerates."""


EIG_RTOL = 1e-9


@dataclass(frozen=True)
class GeneralSystem:
    A: np.ndarray
    b0: np.ndarray
    b1: np.ndarray
    lambda0: float
    lambda1: float

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float).reshape(2, 2))
        object.__setattr__(self, "b0", np.asarray(self.b0, dtype=float).reshape(2))
        object.__setattr__(self, "b1", np.asarray(self.b1, dtype=float).reshape(2))
        if not (self.lambda0 > 0 and self.lambda1 > 0):
            raise ValueError("switching rates must be positive")

    def b(self, i: int) -> np.ndarray:
        return self.b0 if i == 0 else self.b1

    def fixed_point(self, i: int) -> np.ndarray:
        return -np.linalg.solve(self.A, self.b(i))

    def flow(self, i: int, t: float, x) -> np.ndarray:
        """Exact affine flow ``e^{At}(x - x_i*) + x_i*``."""
        xs = self.fixed_point(i)
        return (np.asarray(x, dtype=float) - xs) @ expm(self.A * t).T + xs

    def to_json(self) -> dict:
        return {"A": self.A.ravel().tolist(), "b0": self.b0.tolist(),
                "b1": self.b1.tolist(), "lambda0": self.lambda0, "lambda1": self.lambda1}

    @classmethod
    def from_json(cls, doc: dict) -> "GeneralSystem":
        return cls(np.asarray(doc["A"], dtype=float).reshape(2, 2), doc["b0"], doc["b1"],
                   float(doc["lambda0"]), float(doc["lambda1"]))

    @classmethod
    def load(cls, path) -> "GeneralSystem":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Conjugacy:
    """Canonical coordinates ``y = G x + shift_i`` while field ``i`` drives.

    With the row scaling used here the two shifts coincide, so the change of
    variables is a single affine map.
    """

    G: np.ndarray
    shift0: np.ndarray
    shift1: np.ndarray
    params: SwitchingParams

    def shift(self, i: int) -> np.ndarray:
        return self.shift0 if i == 0 else self.shift1

    def to_canonical(self, x, i: int = 0) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.G.T + self.shift(i)

    def from_canonical(self, y, i: int = 0) -> np.ndarray:
        return np.linalg.solve(self.G, (np.asarray(y, dtype=float) - self.shift(i)).T).T

    def to_json(self) -> dict:
        return {"G": self.G.tolist(), "shift0": self.shift0.tolist(),
                "shift1": self.shift1.tolist(), "params": self.params.as_dict()}


def reduce(sys: GeneralSystem) -> Conjugacy:
    mu, vecs = np.linalg.eig(sys.A)
    if np.any(np.abs(mu.imag) > 0):
        raise UnsupportedSystemError(f"complex eigenvalues {mu}")
    mu = mu.real
    if np.any(mu >= 0):
        raise UnsupportedSystemError(f"eigenvalues must be negative, got {mu}")
    if abs(mu[0] - mu[1]) <= EIG_RTOL * np.max(np.abs(mu)):
        raise UnsupportedSystemError(f"repeated eigenvalue {mu[0]:.6g}")
    order = np.argsort(mu)  # most negative first -> fast axis
    alpha, beta = -mu[order[0]], -mu[order[1]]
    # rows of V^{-1} are left eigenvectors
    G = np.linalg.inv(vecs.real)[order]
    D_inv = np.diag([-1.0 / alpha, -1.0 / beta])
    diff = sys.fixed_point(1) - sys.fixed_point(0)
    gap = G @ diff
    if np.any(np.abs(gap) <= 1e-12 * np.linalg.norm(G, axis=1) * np.linalg.norm(diff)):
        raise UnsupportedSystemError(
            "fixed points differ only along one eigendirection; canonical form needs both")
    G = G / gap[:, None]
    shift0 = D_inv @ G @ sys.b0
    shift1 = D_inv @ G @ sys.b1 + 1.0
    params = SwitchingParams(alpha, beta, sys.lambda0, sys.lambda1)
    return Conjugacy(G, shift0, shift1, params)


def conjugacy_residual(sys: GeneralSystem, conj: Conjugacy, i: int, t: float, x) -> float:
    """``|G flow_sys(x) + c - Phi_i^t(G x + c)|`` in canonical coordinates."""
    lhs = conj.to_canonical(sys.flow(i, t, x), i)
    rhs = flow_forward(conj.params, i, t, conj.to_canonical(x, i))
    return float(np.max(np.abs(lhs - rhs)))


def preset_gene_expression(alpha_prod: float, delta: float, beta_prod: float, gamma: float,
                           lambda0: float, lambda1: float,
                           Xstar: float | None = None, Ystar: float | None = None) -> GeneralSystem:
    """Rescaled mRNA/protein model; ``x`` is mRNA, ``y`` protein, ``I_t = 1`` transcribes.

    ``beta_prod`` and ``Ystar`` only fix the protein scale and drop out of the
    rescaled dynamics.
    """
    for name, v in (("alpha", alpha_prod), ("delta", delta), ("beta", beta_prod),
                    ("gamma", gamma), ("lambda0", lambda0), ("lambda1", lambda1)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    if delta == gamma:
        raise UnsupportedSystemError("delta == gamma gives a repeated eigenvalue")
    if Xstar is None:
        Xstar = alpha_prod / delta * lambda0 / (lambda0 + lambda1)
    A = np.array([[-delta, 0.0], [gamma, -gamma]])
    return GeneralSystem(A, np.zeros(2), np.array([alpha_prod / Xstar, 0.0]), lambda0, lambda1)


def pde_mode(n: int) -> tuple[float, float]:
    """Decay rate and switching amplitude of the ``n``-th sine mode."""
    return n * n * np.pi ** 2, (-1) ** (n + 1) * np.sqrt(2.0) / (n * np.pi)


def preset_pde_modes(k: int, m: int, lambda0: float, lambda1: float) -> GeneralSystem:
    """Two sine-mode coefficients of the heat equation with a switching boundary value."""
    if int(k) != k or int(m) != m or k < 1 or m < 1:
        raise ValueError("mode indices must be positive integers")
    if k == m:
        raise UnsupportedSystemError("k == m gives a repeated eigenvalue")
    bk_rate, bk = pde_mode(k)
    bm_rate, bm = pde_mode(m)
    A = np.diag([-bk_rate, -bm_rate])
    return GeneralSystem(A, np.zeros(2), np.array([bk_rate * bk, bm_rate * bm]), lambda0, lambda1)
