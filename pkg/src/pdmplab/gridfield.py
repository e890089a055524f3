"""Per-regime scalar fields on a uniform grid, with the CSV exchange format.

A field with resolution ``(n1, n2)`` over ``[a1, b1] x [a2, b2]`` has one value
per cell. Densities are cell averages; CDF values live at the upper-right
corner of each cell, so ``cdf[k1, k2]`` is the mass of all cells with indices
``<= (k1, k2)``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("density", "cdf")


@dataclass
class GridField:
    kind: str
    values0: np.ndarray
    values1: np.ndarray
    bounds: tuple = (0.0, 1.0, 0.0, 1.0)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        self.values0 = np.asarray(self.values0, dtype=float)
        self.values1 = np.asarray(self.values1, dtype=float)
        if self.values0.ndim != 2 or self.values0.shape != self.values1.shape:
            raise ValueError("values0 and values1 must be 2-d arrays of equal shape")
        self.bounds = tuple(float(b) for b in self.bounds)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values0.shape

    @property
    def n1(self) -> int:
        return self.shape[0]

    @property
    def n2(self) -> int:
        return self.shape[1]

    @property
    def cell_size(self) -> tuple[float, float]:
        a1, b1, a2, b2 = self.bounds
        return (b1 - a1) / self.n1, (b2 - a2) / self.n2

    @property
    def cell_area(self) -> float:
        h1, h2 = self.cell_size
        return h1 * h2

    def values(self, i: int) -> np.ndarray:
        return self.values0 if i == 0 else self.values1

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        """Sample coordinates along each axis: cell centres or upper nodes."""
        a1, b1, a2, b2 = self.bounds
        h1, h2 = self.cell_size
        off = 0.5 if self.kind == "density" else 1.0
        return (a1 + (np.arange(self.n1) + off) * h1,
                a2 + (np.arange(self.n2) + off) * h2)

    def points(self) -> np.ndarray:
        u, v = self.axes()
        return np.stack(np.meshgrid(u, v, indexing="ij"), axis=-1)

    def total_mass(self) -> float:
        if self.kind == "density":
            return float((self.values0.sum() + self.values1.sum()) * self.cell_area)
        return float(self.values0[-1, -1] + self.values1[-1, -1])

    def to_cdf(self) -> "GridField":
        if self.kind == "cdf":
            return self
        conv = [np.cumsum(np.cumsum(v * self.cell_area, axis=0), axis=1)
                for v in (self.values0, self.values1)]
        return GridField("cdf", conv[0], conv[1], self.bounds, dict(self.meta))

    def to_density(self) -> "GridField":
        """Mixed finite differences of a CDF, divided by cell area."""
        if self.kind == "density":
            return self
        out = []
        for v in (self.values0, self.values1):
            padded = np.pad(v, ((1, 0), (1, 0)))
            out.append(np.diff(np.diff(padded, axis=0), axis=1) / self.cell_area)
        return GridField("density", out[0], out[1], self.bounds, dict(self.meta))

    def is_monotone(self, atol: float = 0.0) -> bool:
        if self.kind != "cdf":
            raise ValueError("monotonicity applies to CDF fields")
        return all(np.all(np.diff(v, axis=ax) >= -atol)
                   for v in (self.values0, self.values1) for ax in (0, 1))

    def to_csv(self, path=None, provenance: dict | None = None) -> str:
        buf = io.StringIO()
        for key, val in (provenance or {}).items():
            buf.write(f"# {key}: {val}\n")
        a1, b1, a2, b2 = self.bounds
        buf.write(f"kind,{self.kind}\nn1,{self.n1}\nn2,{self.n2}\n")
        buf.write(f"bounds,{a1!r},{b1!r},{a2!r},{b2!r}\n")
        i1, i2 = np.meshgrid(np.arange(self.n1), np.arange(self.n2), indexing="ij")
        rows = np.column_stack([i1.ravel(), i2.ravel()])
        for (k1, k2), v0, v1 in zip(rows.tolist(), self.values0.ravel().tolist(),
                                    self.values1.ravel().tolist()):
            buf.write(f"{k1},{k2},{v0!r},{v1!r}\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text) -> "GridField":
        text = str(path_or_text)
        if "\n" not in text:
            text = Path(text).read_text()
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        header = dict((ln.split(",", 1)[0], ln.split(",", 1)[1]) for ln in lines[:4])
        n1, n2 = int(header["n1"]), int(header["n2"])
        bounds = tuple(float(b) for b in header["bounds"].split(","))
        data = np.loadtxt(io.StringIO("\n".join(lines[4:])), delimiter=",", ndmin=2)
        v0 = np.zeros((n1, n2))
        v1 = np.zeros((n1, n2))
        idx = data[:, :2].astype(int)
        v0[idx[:, 0], idx[:, 1]] = data[:, 2]
        v1[idx[:, 0], idx[:, 1]] = data[:, 3]
        return cls(header["kind"], v0, v1, bounds)
