"""Discrete paths on [-T, 0], window extraction, and pathwise integrals.

A ``Path`` samples a continuous function on the uniform nodes
``x_k = -T + k * T / (n_nodes - 1)``; off-node evaluation is linear
interpolation everywhere in this package.  A ``Trajectory`` pastes such a
history onto values produced on a forward time grid, and ``window`` cuts
the length-T look-back slice out of the combined record.

The pathwise integral against the increments of a path is realised through
integration by parts,

    integral(psi d-eta)  =  psi(0) * eta(0) - int_{-T}^0 psi'(x) eta(x) dx,

a convention that places the initial point mass at -T: the constant
integrand reproduces eta(0), and a constant path returns c * psi(-T).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "Grid",
    "Path",
    "Trajectory",
    "WindowBatch",
    "sup_norm",
    "window",
    "forward_integral",
    "extend_canonical",
    "path_to_csv",
    "path_from_csv",
]


@dataclass(frozen=True)
class Grid:
    """Uniform time grid over [t_start, t_end] with n_steps steps."""

    t_start: float
    t_end: float
    n_steps: int

    def __post_init__(self) -> None:
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.t_end > self.t_start:
            raise ValueError(f"need t_end > t_start, got [{self.t_start}, {self.t_end}]")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.n_steps + 1)

    def nearest_index(self, s: float, tol: float = 1e-9) -> int:
        """Snap s to the nearest grid node; error if s lies outside the grid."""
        span = self.t_end - self.t_start
        if s < self.t_start - tol * max(1.0, span) or s > self.t_end + tol * max(1.0, span):
            raise ValueError(f"time {s} outside grid [{self.t_start}, {self.t_end}]")
        k = int(round((s - self.t_start) / self.dt))
        return min(max(k, 0), self.n_steps)


@dataclass(frozen=True)
class Path:
    """A continuous path on [-T, 0] sampled on uniform nodes.

    ``values[k]`` is the sample at ``x_k = -T + k * T/(n_nodes-1)``, so the
    final entry is the present value eta(0).
    """

    horizon: float
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("a Path needs a 1-d array of at least 2 values")
        if not np.all(np.isfinite(vals)):
            raise ValueError("path values must be finite")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def n_nodes(self) -> int:
        return self.values.size

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(-self.horizon, 0.0, self.n_nodes)

    def __call__(self, x) -> np.ndarray | float:
        """Evaluate at x in [-T, 0] by linear interpolation (clamped outside)."""
        out = np.interp(x, self.nodes, self.values)
        return float(out) if np.isscalar(x) else out

    @classmethod
    def from_function(cls, f: Callable, horizon: float, n_nodes: int = 201) -> "Path":
        xs = np.linspace(-horizon, 0.0, n_nodes)
        return cls(horizon, np.asarray(f(xs), dtype=float))

    @classmethod
    def constant(cls, c: float, horizon: float, n_nodes: int = 201) -> "Path":
        return cls(horizon, np.full(n_nodes, float(c)))


@dataclass(frozen=True)
class Trajectory:
    """Forward values on a grid over [t, t_end], pasted onto a history path.

    The prefix covers [t - T, t]; continuity requires its present value to
    equal ``values[0]`` exactly.
    """

    grid: Grid
    prefix: Path
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.n_steps + 1,):
            raise ValueError(
                f"values shape {vals.shape} does not match grid with {self.grid.n_steps} steps"
            )
        if vals[0] != self.prefix.values[-1]:
            raise ValueError("prefix present value must equal values[0] exactly")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def at_time(self, s) -> np.ndarray | float:
        """Value at absolute time s: prefix before t_start, interpolated after."""
        t0 = self.grid.t_start
        s_arr = np.asarray(s, dtype=float)
        body = np.interp(s_arr, self.grid.times, self.values)
        pre = self.prefix(np.clip(s_arr - t0, -self.prefix.horizon, 0.0))
        out = np.where(s_arr <= t0, pre, body)
        return float(out) if np.isscalar(s) else out


@dataclass
class WindowBatch:
    """Many length-T look-back slices sharing one node layout.

    ``values[i, j]`` is path i at window node ``xs[j]``; the last column is
    the present value.  Used to evaluate path-dependent coefficients on all
    Monte Carlo paths at once.
    """

    xs: np.ndarray
    values: np.ndarray

    @property
    def horizon(self) -> float:
        return -float(self.xs[0])

    @property
    def present(self) -> np.ndarray:
        return self.values[:, -1]

    def sup_norm(self) -> np.ndarray:
        return np.max(np.abs(self.values), axis=1)

    def forward_integral(self, psi: Callable, psi_prime: Callable) -> np.ndarray:
        """Row-wise psi(0)*eta(0) - int psi'(x) eta(x) dx (trapezoid)."""
        integrand = self.values * psi_prime(self.xs)[None, :]
        return float(psi(0.0)) * self.present - np.trapezoid(integrand, self.xs, axis=1)

    def path(self, i: int) -> Path:
        return Path(self.horizon, self.values[i])


def sup_norm(path: Path) -> float:
    """Supremum norm over the path nodes."""
    return float(np.max(np.abs(path.values)))


def window(traj: Trajectory, s: float) -> Path:
    """Length-T look-back slice of the trajectory at time s.

    s is snapped to the nearest grid node.  The result carries the prefix's
    node layout; where prefix and body layouts disagree, values are linear
    interpolations of the stored samples.
    """
    k = traj.grid.nearest_index(s)
    sk = traj.grid.times[k]
    T = traj.prefix.horizon
    xs = np.linspace(-T, 0.0, traj.prefix.n_nodes)
    if k == 0:
        return Path(T, traj.prefix.values)
    taus = sk + xs
    t0 = traj.grid.t_start
    pre = traj.prefix(np.clip(taus - t0, -T, 0.0))
    body = np.interp(taus, traj.grid.times, traj.values)
    vals = np.where(taus <= t0, pre, body)
    vals[-1] = traj.values[k]
    return Path(T, vals)


def forward_integral(psi: Callable, psi_prime: Callable, path: Path) -> float:
    """Pathwise integral of psi against the increments of the path.

    Computed as psi(0)*eta(0) - int_{-T}^0 psi'(x) eta(x) dx with the
    Lebesgue integral by composite trapezoid on the path nodes.  The
    convention carries the initial point mass at -T, so psi == 1 returns
    eta(0) and a constant path returns c * psi(-T).
    """
    xs = path.nodes
    lebesgue = np.trapezoid(np.asarray(psi_prime(xs), dtype=float) * path.values, xs)
    return float(psi(0.0)) * float(path.values[-1]) - float(lebesgue)


def extend_canonical(times: np.ndarray, values: np.ndarray, s) -> np.ndarray | float:
    """Evaluate a trajectory at any real time, frozen outside its span.

    Returns the first value for s before the record starts, the last value
    after it ends, and the linear interpolation in between.
    """
    out = np.interp(s, np.asarray(times, dtype=float), np.asarray(values, dtype=float))
    return float(out) if np.isscalar(s) else out


def path_to_csv(path: Path, filename) -> None:
    """Write the path as CSV with columns (x, value), x ascending from -T."""
    with open(filename, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "value"])
        for x, v in zip(path.nodes, path.values):
            writer.writerow([f"{x:.17g}", f"{v:.17g}"])


def path_from_csv(filename) -> Path:
    with open(filename, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["x", "value"]:
            raise ValueError(f"unexpected CSV header {header!r}, want ['x', 'value']")
        rows = [(float(r[0]), float(r[1])) for r in reader]
    xs = np.array([r[0] for r in rows])
    vals = np.array([r[1] for r in rows])
    if xs[0] >= 0 or abs(xs[-1]) > 1e-12 * max(1.0, -xs[0]):
        raise ValueError("CSV nodes must ascend from -T to 0")
    return Path(-xs[0], vals)
