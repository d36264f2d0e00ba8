"""Regression-based backward solver for terminal-value stochastic equations.

The scheme is the explicit least-squares one: walking backward from the
terminal samples, the gradient process is the regression of
Y_{k+1} dW_k / dt on a feature map of the current state, and the value
process is the projection of Y_{k+1} plus one explicit driver step,

    Z_k = P_k[ Y_{k+1} dW_k / dt ],
    Y_k = P_k[ Y_{k+1} ] + F(t_k, S_k, P_k[Y_{k+1}], Z_k) dt,

with P_k the least-squares projection onto the span of the step-k
features.  Both regressions share one factorisation per step.  The
terminal entry of Y is the supplied sample array, untouched.

On top of the solver sit the analytics used by the comparison and limit
experiments: extraction of the nondecreasing compensator of a
supersolution, order checks between two fields, and the coupled
convergence table for sequences of drivers and terminals.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .paths import Grid
from .sde import NoiseBundle, TrajectoryBatch
from .smoothing import FourierBasis, Integrand

__all__ = [
    "DriverSpec",
    "BsdeSolution",
    "RegressionBasisSpec",
    "RegressionError",
    "solve_bsde",
    "extract_compensator",
    "comparison_check",
    "bsde_norms",
    "limit_experiment",
    "limit_table_to_csv",
]


class RegressionError(RuntimeError):
    """The per-step least-squares problem could not be solved."""


@dataclass(frozen=True)
class DriverSpec:
    """Generator F(t, state, y, z) with its Lipschitz and growth budgets.

    ``f`` is vectorised over paths: state is whatever the feature provider
    exposes at a step (the state array for Markovian problems, the raw
    feature bundle for path-dependent ones), y has shape (m,) and z shape
    (m, d); the result has shape (m,).  ``f = None`` means the zero driver.
    """

    f: Callable | None
    lipschitz: float = 0.0
    growth_c: float | None = None
    growth_m: float | None = None

    def __call__(self, t, state, y, z) -> np.ndarray:
        if self.f is None:
            return np.zeros_like(y)
        return np.asarray(self.f(t, state, y, z), dtype=float)


@dataclass
class BsdeSolution:
    """Per-path value, gradient, and optional compensator arrays."""

    grid: Grid
    Y: np.ndarray  # (n_paths, n_steps + 1)
    Z: np.ndarray  # (n_paths, n_steps, d)
    K: np.ndarray | None = None  # (n_paths, n_steps + 1), K[:, 0] == 0

    def __post_init__(self) -> None:
        n, m = self.Y.shape
        if self.Z.shape[0] != n or self.Z.shape[1] != m - 1:
            raise ValueError(f"Z shape {self.Z.shape} inconsistent with Y {self.Y.shape}")
        if self.K is not None:
            if self.K.shape != self.Y.shape:
                raise ValueError(f"K shape {self.K.shape} inconsistent with Y {self.Y.shape}")
            if np.any(self.K[:, 0] != 0.0):
                raise ValueError("the compensator must start at zero")

    @property
    def value(self) -> float:
        return float(self.Y[:, 0].mean())


# ---------------------------------------------------------------------------
# Feature maps


def _poly_features(x: np.ndarray, degree: int) -> np.ndarray:
    """Monomial features of total degree <= degree, constant column first."""
    if x.ndim == 1:
        x = x[:, None]
    m, d = x.shape
    cols = [np.ones(m)]
    if degree >= 1:
        cols.extend(x[:, j] for j in range(d))
    if degree >= 2:
        for j in range(d):
            for l in range(j, d):
                cols.append(x[:, j] * x[:, l])
    if degree >= 3:
        for j in range(d):
            for l in range(j, d):
                for r in range(l, d):
                    cols.append(x[:, j] * x[:, l] * x[:, r])
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class RegressionBasisSpec:
    """Feature map for the per-step cross-sectional regressions.

    kind "markov": monomials of the state up to ``degree`` (<= 3).
    kind "path": present value, running maximum, running time-integral,
    and 2*n_fourier trigonometric pathwise-integral coordinates, with the
    present/max pair enriched to ``degree`` 2 when requested.

    ``ridge`` scales the identity added to the normal equations by
    trace(A'A)/B; zero disables it.
    """

    kind: str = "markov"
    degree: int = 2
    n_fourier: int = 2
    ridge: float = 1e-8

    def __post_init__(self) -> None:
        if self.kind not in ("markov", "path"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if not 0 <= self.degree <= 3:
            raise ValueError(f"polynomial degree must be within 0..3, got {self.degree}")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


class _MarkovFeatures:
    """Step-major views of the state for fast per-step design assembly."""

    def __init__(self, spec: RegressionBasisSpec, traj: TrajectoryBatch):
        self.spec = spec
        self.traj = traj
        v = traj.values if traj.values.ndim == 3 else traj.values[:, :, None]
        self._v_t = np.ascontiguousarray(v.transpose(1, 0, 2))  # (steps+1, n, d)

    def state(self, k: int) -> np.ndarray:
        x = self._v_t[k]
        return x[:, 0] if x.shape[1] == 1 else x

    def design_t(self, k: int) -> np.ndarray:
        """Design matrix transposed: shape (B, n_paths), rows contiguous."""
        return np.ascontiguousarray(_poly_features(self._v_t[k], self.spec.degree).T)


class _PathFeatures:
    """Raw path functionals stored per step during one forward sweep.

    The trigonometric coordinates are the pathwise integrals of the basis
    integrands over [-s, 0] at time s, accumulated by trapezoid; running
    maximum and time-integral are cumulative reductions.  Stored float32:
    they only feed least squares.
    """

    def __init__(self, spec: RegressionBasisSpec, traj: TrajectoryBatch):
        if traj.values.ndim != 2:
            raise ValueError("path-dependent features need scalar trajectories")
        if traj.prefix is None:
            raise ValueError("path-dependent features need the history path")
        self.spec = spec
        self.traj = traj
        # step-major float32 throughout: these arrays only feed least squares
        v = np.ascontiguousarray(traj.values.T, dtype=np.float32)  # (steps+1, n)
        self._v_t = v
        times = traj.grid.times
        dt = np.float32(traj.grid.dt)
        prefix = traj.prefix

        pre_max = np.float32(np.max(prefix.values))
        self.run_max = np.maximum.accumulate(v, axis=0)
        np.maximum(self.run_max, pre_max, out=self.run_max)

        xs = prefix.nodes
        pre_int = np.float32(np.trapezoid(prefix.values, xs))
        cum = np.empty_like(v)
        cum[0] = pre_int
        np.cumsum(np.float32(0.5) * dt * (v[1:] + v[:-1]), axis=0, out=cum[1:])
        cum[1:] += pre_int
        self.run_int = cum

        T = prefix.horizon
        basis = FourierBasis(T, max_index=2 * spec.n_fourier)
        self.fourier: list[np.ndarray] = []
        t0 = traj.grid.t_start
        for i in range(1, 2 * spec.n_fourier + 1):
            g = lambda u, i=i: basis.evaluate(i, np.asarray(u) - T)
            g_anti = lambda u, i=i: basis.antiderivative(i, np.asarray(u) - T)
            # accumulated Lebesgue part int_0^s g(u) X_u du
            if t0 > 0:
                us = np.linspace(0.0, t0, max(2, prefix.n_nodes))
                head = np.float32(np.trapezoid(np.asarray(g(us)) * prefix(us - t0), us))
            else:
                head = np.float32(0.0)
            gk = np.asarray(g(times), dtype=np.float32)[:, None]
            feat = np.empty_like(v)
            feat[0] = 0.0
            np.cumsum(np.float32(0.5) * dt * (gk[1:] * v[1:] + gk[:-1] * v[:-1]), axis=0, out=feat[1:])
            feat += head
            np.negative(feat, out=feat)  # feat = -(head + int_0^s g X du)
            feat += np.asarray(g_anti(times), dtype=np.float32)[:, None] * v
            self.fourier.append(feat)

    def state(self, k: int):
        return {
            "present": self._v_t[k].astype(np.float64),
            "running_max": self.run_max[k].astype(np.float64),
            "running_integral": self.run_int[k].astype(np.float64),
            "fourier": np.stack([f[k] for f in self.fourier], axis=1).astype(np.float64),
        }

    def design_t(self, k: int) -> np.ndarray:
        """Design matrix transposed: shape (B, n_paths), rows contiguous."""
        x = self._v_t[k]
        m = self.run_max[k]
        n_base = 4 + (3 if self.spec.degree >= 2 else 0)
        out = np.empty((n_base + len(self.fourier), x.size))
        out[0] = 1.0
        out[1] = x
        out[2] = m
        out[3] = self.run_int[k]
        if self.spec.degree >= 2:
            np.square(out[1], out=out[4])
            np.square(out[2], out=out[5])
            np.multiply(out[1], out[2], out=out[6])
        for j, f in enumerate(self.fourier):
            out[n_base + j] = f[k]
        return out


def make_features(spec: RegressionBasisSpec, traj: TrajectoryBatch):
    return _MarkovFeatures(spec, traj) if spec.kind == "markov" else _PathFeatures(spec, traj)


# ---------------------------------------------------------------------------
# Least squares


class _Factor:
    """Normal-equations factorisation of one step's design, reused per target.

    ``At`` is the transposed design matrix, shape (B, n), with the
    intercept in row 0.  The intercept is handled by centring: features
    and targets are demeaned, the ridge penalises only the non-constant
    directions, and the target mean is restored afterwards.  Constants are
    therefore reproduced exactly, the cross-sectional mean of the fitted
    values equals the target mean exactly, and feature rows that are
    (numerically) constant are dropped.
    """

    def __init__(self, At: np.ndarray, ridge: float):
        B, n = At.shape
        head = At[:, : min(n, 4096)]
        scale = np.abs(head).max(axis=1)
        keep = np.zeros(B, dtype=bool)
        keep[1:] = head[1:].std(axis=1) > 1e-13 * np.maximum(1.0, scale[1:])
        centered = At[keep] - At[keep].mean(axis=1, keepdims=True)
        self.A = centered
        self.ridge = ridge
        G = centered @ centered.T
        if ridge > 0 and G.shape[0] > 0:
            G = G + (ridge * np.trace(G) / G.shape[0]) * np.eye(G.shape[0])
        self.G = G

    def fit(self, targets: np.ndarray) -> np.ndarray:
        """Fitted values (n, n_targets) of the least-squares projection."""
        means = targets.mean(axis=0, keepdims=True)
        if self.A.shape[0] == 0:  # every feature degenerate: project onto constants
            return np.repeat(means, targets.shape[0], axis=0)
        resid = targets - means
        rhs = self.A @ resid
        try:
            beta = np.linalg.solve(self.G, rhs)
            fitted = self.A.T @ beta
            if not np.all(np.isfinite(fitted)):
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            if self.ridge == 0:
                raise RegressionError(
                    "normal equations are rank deficient; pass a ridge parameter > 0"
                ) from None
            beta, *_ = np.linalg.lstsq(self.A.T, resid, rcond=None)
            fitted = self.A.T @ beta
        fitted += means
        return fitted


def _fit(At: np.ndarray, targets: np.ndarray, ridge: float) -> np.ndarray:
    return _Factor(At, ridge).fit(targets)


def solve_bsde(
    driver: DriverSpec,
    terminal: np.ndarray,
    features,
    trajectories: TrajectoryBatch,
    increments: np.ndarray,
    basis: RegressionBasisSpec | None = None,
    with_compensator: bool = False,
) -> BsdeSolution:
    """Backward induction from the terminal samples along the trajectories.

    ``features`` is either a RegressionBasisSpec (compiled here against the
    trajectories) or an already-compiled provider with design/state
    methods.  ``increments`` are the Brownian increments used by the
    forward simulation, shape (n_paths, n_steps, d).
    """
    if isinstance(features, RegressionBasisSpec):
        basis = features
        features = make_features(features, trajectories)
    elif basis is None:
        basis = getattr(features, "spec", RegressionBasisSpec())

    terminal = np.asarray(terminal, dtype=float)
    n_paths = trajectories.n_paths
    if terminal.shape != (n_paths,):
        raise ValueError(f"terminal samples shape {terminal.shape} != ({n_paths},)")
    grid = trajectories.grid
    n_steps = grid.n_steps
    if increments.shape[0] != n_paths or increments.shape[1] != n_steps:
        raise ValueError(f"increments shape {increments.shape} mismatches trajectories")
    d = increments.shape[2]
    probe = features.design_t(0)
    if probe.shape[0] > n_paths / 10:
        raise ValueError(
            f"basis size {probe.shape[0]} exceeds the well-posedness guard n_paths/10 = {n_paths / 10:g}"
        )

    dt = grid.dt
    times = grid.times
    dW_t = np.ascontiguousarray(increments.transpose(1, 0, 2))  # (steps, n, d)
    Y_t = np.empty((n_steps + 1, n_paths))
    Z_t = np.empty((n_steps, n_paths, d))
    Y_t[-1] = terminal
    targets = np.empty((n_paths, d + 1))
    for k in range(n_steps - 1, -1, -1):
        factor = _Factor(features.design_t(k), basis.ridge)
        y_next = Y_t[k + 1]
        np.multiply(dW_t[k], y_next[:, None], out=targets[:, :d])
        targets[:, :d] /= dt
        targets[:, d] = y_next
        fitted = factor.fit(targets)
        Z_t[k] = fitted[:, :d]
        y_proj = fitted[:, d]
        Y_t[k] = y_proj + driver(times[k], features.state(k), y_proj, Z_t[k]) * dt

    Y = np.ascontiguousarray(Y_t.T)
    Z = np.ascontiguousarray(Z_t.transpose(1, 0, 2))
    K = None
    if with_compensator:
        K = extract_compensator(Y, Z, driver, features, grid, increments, _zt=Z_t, _dwt=dW_t)
    return BsdeSolution(grid, Y, Z, K)


def extract_compensator(
    Y: np.ndarray,
    Z: np.ndarray,
    driver: DriverSpec,
    features,
    grid: Grid,
    increments: np.ndarray,
    _zt: np.ndarray | None = None,
    _dwt: np.ndarray | None = None,
) -> np.ndarray:
    """Discrete nondecreasing-part residual of a (super)solution candidate.

    K_k = Y_0 - Y_k - sum_{j<k} F(t_j, S_j, Y_j, Z_j) dt
                    + sum_{j<k} <Z_j, dW_j>,

    so K vanishes identically when (Y, Z) satisfies the plain backward
    recursion, grows linearly for a field tilted by -c(s-t), and decreases
    for the opposite tilt.  K[:, 0] is exactly zero.
    """
    n_paths, n1 = Y.shape
    n_steps = n1 - 1
    dt = grid.dt
    times = grid.times
    Y_t = np.ascontiguousarray(Y.T)
    Z_t = _zt if _zt is not None else np.ascontiguousarray(Z.transpose(1, 0, 2))
    dW_t = _dwt if _dwt is not None else np.ascontiguousarray(increments.transpose(1, 0, 2))
    K_t = np.empty_like(Y_t)
    K_t[0] = 0.0
    acc = np.zeros(n_paths)
    for k in range(n_steps):
        f_val = driver(times[k], features.state(k), Y_t[k], Z_t[k])
        acc = acc + np.sum(Z_t[k] * dW_t[k], axis=1) - f_val * dt
        K_t[k + 1] = Y_t[0] - Y_t[k + 1] + acc
    return np.ascontiguousarray(K_t.T)


def comparison_check(
    y_sub: np.ndarray, y_super: np.ndarray, tolerance: float
) -> dict:
    """Fraction of (path, step) entries violating sub <= super + tolerance."""
    if y_sub.shape != y_super.shape:
        raise ValueError("fields must share one grid and path set")
    gap = y_sub - y_super
    violations = gap > tolerance
    worst = float(gap.max())
    return {
        "violation_fraction": float(violations.mean()),
        "worst_violation": worst,
        "tolerance": float(tolerance),
        "n_entries": int(gap.size),
    }


def bsde_norms(solution: BsdeSolution, p: float = 2.0) -> dict:
    """Monte Carlo estimates of the value, gradient, and compensator norms.

    Returns E[sup_k |Y_k|^p], E[sum_k |Z_k|^2 dt], and E[K_T^2] (zero when
    no compensator is attached), each with its standard error.
    """
    if p < 1:
        raise ValueError(f"norm order must be >= 1, got {p}")
    dt = solution.grid.dt
    sup_y = np.abs(solution.Y).max(axis=1) ** p
    z_int = np.sum(solution.Z**2, axis=(1, 2)) * dt
    out = {
        "sp_norm_Y": float(sup_y.mean()),
        "sp_norm_Y_se": float(sup_y.std(ddof=1) / np.sqrt(sup_y.size)),
        "h2_norm_Z": float(z_int.mean()),
        "h2_norm_Z_se": float(z_int.std(ddof=1) / np.sqrt(z_int.size)),
        "s2_norm_K": 0.0,
        "s2_norm_K_se": 0.0,
    }
    if solution.K is not None:
        kT = solution.K[:, -1] ** 2
        out["s2_norm_K"] = float(kT.mean())
        out["s2_norm_K_se"] = float(kT.std(ddof=1) / np.sqrt(kT.size))
    return out


def limit_experiment(
    driver_seq: Sequence[DriverSpec],
    driver: DriverSpec,
    terminal_seq: Sequence[np.ndarray],
    terminal: np.ndarray,
    features_spec: RegressionBasisSpec,
    trajectories_seq: Sequence[TrajectoryBatch],
    trajectories: TrajectoryBatch,
    increments: np.ndarray,
    q: float = 1.0,
    n_labels: Sequence[int] | None = None,
) -> list[dict]:
    """Coupled convergence table for a sequence of perturbed problems.

    Each row solves the perturbed problem under the same increments and
    reports E int |Z^n - Z|^q dt, E sup |Y^n - Y|^2, and max_k E|K^n - K|,
    plus the S^p diagnostics of Y^n for p in {2, 4} (logged, not asserted:
    only finite p is observable).
    """
    if not 1 <= q < 2:
        raise ValueError(f"q must lie in [1, 2), got {q}")
    base = solve_bsde(driver, terminal, features_spec, trajectories, increments, with_compensator=True)
    dt = trajectories.grid.dt
    rows: list[dict] = []
    for idx, (drv_n, term_n, traj_n) in enumerate(zip(driver_seq, terminal_seq, trajectories_seq)):
        sol_n = solve_bsde(drv_n, term_n, features_spec, traj_n, increments, with_compensator=True)
        z_gap_paths = np.sum(np.abs(sol_n.Z - base.Z) ** q, axis=(1, 2)) * dt
        y_gap_paths = np.max(np.abs(sol_n.Y - base.Y), axis=1) ** 2
        k_gap = np.abs(sol_n.K - base.K).mean(axis=0).max()
        sup_y2 = np.abs(sol_n.Y).max(axis=1)
        rows.append(
            {
                "n": int(n_labels[idx]) if n_labels is not None else idx,
                "z_gap_q": float(z_gap_paths.mean()),
                "z_gap_q_se": float(z_gap_paths.std(ddof=1) / np.sqrt(z_gap_paths.size)),
                "y_gap_sup2": float(y_gap_paths.mean()),
                "y_gap_sup2_se": float(y_gap_paths.std(ddof=1) / np.sqrt(y_gap_paths.size)),
                "k_gap_max": float(k_gap),
                "y_sp2": float((sup_y2**2).mean()),
                "y_sp4": float((sup_y2**4).mean()),
            }
        )
    return rows


def limit_table_to_csv(rows: list[dict], filename) -> None:
    header = ["n", "z_gap_q", "y_gap_sup2", "k_gap_max", "se_z_gap_q", "se_y_gap_sup2"]
    with open(filename, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in rows:
            writer.writerow(
                [
                    r["n"],
                    f"{r['z_gap_q']:.17g}",
                    f"{r['y_gap_sup2']:.17g}",
                    f"{r['k_gap_max']:.17g}",
                    f"{r['z_gap_q_se']:.17g}",
                    f"{r['y_gap_sup2_se']:.17g}",
                ]
            )
