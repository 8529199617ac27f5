"""Time stepping of the age-size structured population system.

One step ``t_n -> t_{n+1}`` is a first-order splitting:

1. upwind transport in age (speed 1) and then in size (flux ``g u``),
2. Crank-Nicolson solve of ``d_t u = K u + f`` in x (mirror ghost nodes),
3. boundary refresh: birth integral at ``a = 0`` from ``u^n`` and zero inflow
   at ``tau = tau_min``.

Outflow at ``a = a_max`` and ``tau = tau_max`` needs no condition: the
upwind stencil only looks backwards.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .coefficients import CoefficientSet
from .domain import DomainSpec, Field, Grid, build_grid
from .operators import apply_K, apply_L0, birth_integral, birth_kernel_table

logger = logging.getLogger(__name__)


class CFLError(ValueError):
    pass


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ForwardProblem:
    """Data of one forward run.

    ``initial`` is ``p(*x, a, tau)`` (callable) or an array of shape
    ``(*x, n_a, n_tau)``.  ``source`` is ``f(*x, t, a, tau)``, a full-grid
    :class:`Field` or ``None``.  ``age_boundary(*x, t, tau)`` and
    ``size_boundary(*x, t, a)`` replace the birth law and the zero inflow;
    they exist for manufactured-solution runs.
    """

    grid: Grid
    coeffs: CoefficientSet
    initial: Callable | np.ndarray
    source: Callable | Field | None = None
    age_boundary: Callable | None = None
    size_boundary: Callable | None = None

    @property
    def spec(self) -> DomainSpec:
        return self.grid.spec

    def initial_values(self) -> np.ndarray:
        g = self.grid
        shape = g.shape[: g.n] + g.shape[g.n + 1:]
        if callable(self.initial):
            xs = [g.coord(k)[..., 0, :, :] for k in range(g.n)]
            a = g.coord(g.a_axis)[..., 0, :, :]
            tau = g.coord(g.tau_axis)[..., 0, :, :]
            p = np.broadcast_to(self.initial(*xs, a, tau), shape).astype(float)
        else:
            p = np.asarray(self.initial, dtype=float)
            if p.shape != shape:
                raise ValueError(f"initial data shape {p.shape}, expected {shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("initial data not finite")
        return p


@dataclass(frozen=True)
class Trajectory:
    """Solution samples, one ``(x, a, tau)`` slice per time node."""

    grid: Grid
    values: np.ndarray = field(repr=False)
    total_population: np.ndarray = field(repr=False)
    max_norm: np.ndarray = field(repr=False)
    initial_mismatch: dict = field(default_factory=dict)

    def __len__(self):
        return self.values.shape[self.grid.t_axis]

    def slice(self, n: int) -> np.ndarray:
        return np.take(self.values, n, axis=self.grid.t_axis)

    def as_field(self, label: str = "u") -> Field:
        return Field(self.grid, self.values, label)


def check_cfl(grid: Grid, coeffs: CoefficientSet) -> float:
    gmax = float(np.max(coeffs.growth_values(grid.tau)))
    number = grid.ht * max(1.0 / grid.ha, gmax / grid.htau)
    if number > 1 + 1e-12:
        raise CFLError(f"CFL violation: h_t*max(1/h_a, max g/h_tau) = {number:.4g} > 1")
    return number


def _reflect(i: np.ndarray, m: int) -> np.ndarray:
    i = np.where(i < 0, -i, i)
    return np.where(i > m - 1, 2 * (m - 1) - i, i)


def assemble_K(grid: Grid, coeffs: CoefficientSet, t: float) -> sp.csr_matrix:
    """Sparse matrix of ``K`` on one time slice, unknowns ordered ``(*x, a, tau)``.

    Identical stencils to :func:`operators.apply_K` (mirror ghost nodes).
    """
    n = grid.n
    slice_shape = grid.shape[:n] + grid.shape[n + 1:]
    size = int(np.prod(slice_shape))
    idx = np.arange(size).reshape(slice_shape)
    xs = np.meshgrid(*grid.x, indexing="ij")
    A = coeffs.diffusion_matrix(xs)
    mesh = [grid.coord(k)[..., 0, :, :] if k < n else None for k in range(n)]
    tt = np.full((1,) * (n + 2), t)
    a = grid.a.reshape((1,) * n + (-1, 1))
    tau = grid.tau.reshape((1,) * n + (1, -1))
    b = coeffs.drift_vector(mesh[:n] + [tt, a, tau], slice_shape)
    c = coeffs.reaction_field(mesh[:n] + [tt, a, tau], slice_shape)
    pad = (1, 1)
    stencil: dict[tuple[int, ...], np.ndarray] = {}

    def add(offset, coef):
        stencil[offset] = stencil.get(offset, 0.0) + np.broadcast_to(coef, slice_shape)

    zero = (0,) * n
    add(zero, -c)
    for i in range(n):
        h = grid.hx[i]
        e = [0] * n
        e[i] = 1
        ep, em = tuple(e), tuple(-v for v in e)
        aii = A[i, i].reshape(A.shape[2:] + pad)
        add(ep, aii / h**2 - b[i] / (2 * h))
        add(em, aii / h**2 + b[i] / (2 * h))
        add(zero, -2 * aii / h**2)
        for j in range(i + 1, n):
            aij = A[i, j].reshape(A.shape[2:] + pad) * 2 / (4 * grid.hx[i] * grid.hx[j])
            for si, sj, sign in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
                o = [0] * n
                o[i], o[j] = si, sj
                add(tuple(o), sign * aij)
    rows, cols, data = [], [], []
    grids = np.meshgrid(*[np.arange(m) for m in slice_shape], indexing="ij")
    for offset, coef in stencil.items():
        nb = list(grids)
        for k, o in enumerate(offset):
            nb[k] = _reflect(grids[k] + o, slice_shape[k])
        rows.append(idx.ravel())
        cols.append(idx[tuple(nb)].ravel())
        data.append(np.asarray(coef).ravel())
    K = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    )
    return K


class _Stepper:
    def __init__(self, problem: ForwardProblem):
        self.p = problem
        self.grid = g = problem.grid
        self.coeffs = problem.coeffs
        self.n = g.n
        self.g_nodes = problem.coeffs.growth_values(g.tau)
        self.kernel = birth_kernel_table(g, problem.coeffs) if problem.age_boundary is None else None
        self.slice_shape = g.shape[: g.n] + g.shape[g.n + 1:]
        self._K_cache: dict[float, sp.csr_matrix] = {}
        self._source = None
        if isinstance(problem.source, Field):
            self._source = problem.source.values

    def K(self, t):
        key = float(t)
        if key not in self._K_cache:
            if len(self._K_cache) > 2:
                self._K_cache.pop(next(iter(self._K_cache)))
            self._K_cache[key] = assemble_K(self.grid, self.coeffs, t)
        return self._K_cache[key]

    def source(self, n_index: int) -> np.ndarray | None:
        src = self.p.source
        if src is None:
            return None
        g = self.grid
        if self._source is not None:
            return np.take(self._source, n_index, axis=g.t_axis)
        t = g.t[n_index]
        xs = [g.coord(k)[..., 0, :, :] for k in range(g.n)]
        a = g.coord(g.a_axis)[..., 0, :, :]
        tau = g.coord(g.tau_axis)[..., 0, :, :]
        return np.broadcast_to(src(*xs, np.full_like(a, t), a, tau), self.slice_shape)

    def transport(self, u: np.ndarray) -> np.ndarray:
        g = self.grid
        ax_a, ax_tau = g.n, g.n + 1
        ra = g.ht / g.ha
        v = u.copy()
        upper = [slice(None)] * u.ndim
        lower = [slice(None)] * u.ndim
        upper[ax_a], lower[ax_a] = slice(1, None), slice(None, -1)
        v[tuple(upper)] = u[tuple(upper)] - ra * (u[tuple(upper)] - u[tuple(lower)])
        gu = v * self.g_nodes
        w = v.copy()
        upper[ax_a], lower[ax_a] = slice(None), slice(None)
        upper[ax_tau], lower[ax_tau] = slice(1, None), slice(None, -1)
        w[tuple(upper)] = v[tuple(upper)] - g.ht / g.htau * (gu[tuple(upper)] - gu[tuple(lower)])
        return w

    def boundaries(self, u_new: np.ndarray, u_old: np.ndarray, n_new: int) -> None:
        g = self.grid
        t = g.t[n_new]
        xs = [g.coord(k)[..., 0, 0, :] for k in range(g.n)]
        idx_a0 = [slice(None)] * u_new.ndim
        idx_a0[g.n] = 0
        if self.p.age_boundary is not None:
            tau = g.tau.reshape((1,) * g.n + (-1,))
            vals = self.p.age_boundary(*xs, np.full_like(tau, t), tau)
        else:
            vals = birth_integral(u_old, self.coeffs, g, kernel=self.kernel)
        u_new[tuple(idx_a0)] = np.broadcast_to(vals, u_new[tuple(idx_a0)].shape)
        idx_t1 = [slice(None)] * u_new.ndim
        idx_t1[g.n + 1] = 0
        if self.p.size_boundary is not None:
            xs = [g.coord(k)[..., 0, :, 0] for k in range(g.n)]
            a = g.a.reshape((1,) * g.n + (-1,))
            vals = self.p.size_boundary(*xs, np.full_like(a, t), a)
            u_new[tuple(idx_t1)] = np.broadcast_to(vals, u_new[tuple(idx_t1)].shape)
        else:
            u_new[tuple(idx_t1)] = 0.0

    def step(self, u: np.ndarray, n_old: int) -> np.ndarray:
        g = self.grid
        t0, t1 = g.t[n_old], g.t[n_old + 1]
        w = self.transport(u)
        flat = w.ravel()
        K0, K1 = self.K(t0), self.K(t1)
        rhs = flat + 0.5 * g.ht * (K0 @ flat)
        f0, f1 = self.source(n_old), self.source(n_old + 1)
        if f0 is not None:
            rhs = rhs + 0.5 * g.ht * (np.ravel(f0) + np.ravel(f1))
        M = (sp.identity(K1.shape[0], format="csc") - 0.5 * g.ht * K1).tocsc()
        new = splu(M).solve(rhs)
        if not np.all(np.isfinite(new)):
            raise SolverError(f"linear solve failed at t={t1:.6g}")
        new = new.reshape(self.slice_shape)
        self.boundaries(new, u, n_old + 1)
        return new


def _population(grid: Grid, slice_values: np.ndarray) -> float:
    out = slice_values
    axes = list(range(grid.n)) + [grid.a_axis, grid.tau_axis]
    for k in reversed(range(out.ndim)):
        out = np.tensordot(out, grid.axis_weights(axes[k]), axes=([k], [0]))
    return float(out)


def initial_mismatch(problem: ForwardProblem, p: np.ndarray) -> dict:
    """Compatibility of ``p`` with the birth law and the size inflow at t = 0."""
    g = problem.grid
    a0 = np.take(p, 0, axis=g.n)
    tau0 = np.take(p, 0, axis=g.n + 1)
    if problem.age_boundary is None:
        birth = birth_integral(p, problem.coeffs, g)
    else:
        xs = [g.coord(k)[..., 0, 0, :] for k in range(g.n)]
        tau = g.tau.reshape((1,) * g.n + (-1,))
        birth = problem.age_boundary(*xs, np.zeros_like(tau), tau)
    return {
        "birth_mismatch": float(np.max(np.abs(a0 - birth))),
        "inflow_mismatch": float(np.max(np.abs(tau0))) if problem.size_boundary is None else 0.0,
    }


def solve_forward(problem: ForwardProblem) -> Trajectory:
    grid = problem.grid
    problem.coeffs.validate(grid)
    check_cfl(grid, problem.coeffs)
    p = problem.initial_values()
    mismatch = initial_mismatch(problem, p)
    if mismatch["birth_mismatch"] > 0 or mismatch["inflow_mismatch"] > 0:
        logger.info("initial data incompatible with boundary laws: %s", mismatch)
    stepper = _Stepper(problem)
    slices = [p]
    u = p
    for k in range(len(grid.t) - 1):
        # adding +0.0 turns the -0.0 left by sign-flipped products into +0.0
        u = stepper.step(u, k) + 0.0
        slices.append(u)
    values = np.stack(slices, axis=grid.t_axis)
    pops = np.array([_population(grid, s) for s in slices])
    maxn = np.array([float(np.max(np.abs(s))) for s in slices])
    return Trajectory(grid, values, pops, maxn, mismatch)


# -- manufactured solutions ---------------------------------------------------------

def mms_source(u_star: Field, coeffs: CoefficientSet) -> Field:
    """Forcing that makes ``u_star`` a solution: ``L0 u* - K u*``."""
    return Field(u_star.grid, apply_L0(u_star, coeffs).values - apply_K(u_star, coeffs).values, "f")


@dataclass(frozen=True)
class ManufacturedProblem:
    """A forward problem generated from a smooth exact solution.

    ``exact(*x, t, a, tau)`` supplies initial data, inflow data on ``a = 0``
    and ``tau = tau_min``, and the reference for errors.  Without an explicit
    ``source`` the discrete :func:`mms_source` of ``exact`` is used.
    """

    spec: DomainSpec
    coeffs: CoefficientSet
    exact: Callable
    source: Callable | None = None
    name: str = "mms"

    def problem(self, resolution) -> ForwardProblem:
        grid = build_grid(self.spec, resolution)
        ex = self.exact
        if self.source is None:
            src = mms_source(Field.from_function(grid, ex), self.coeffs)
        else:
            src = self.source
        return ForwardProblem(
            grid,
            self.coeffs,
            initial=lambda *m: ex(*m[:-2], 0.0, *m[-2:]),
            source=src,
            age_boundary=lambda *m: ex(*m[:-1], 0.0, m[-1]),
            size_boundary=lambda *m: ex(*m, self.spec.tau_min),
        )

    def error(self, traj: Trajectory) -> float:
        ref = Field.from_function(traj.grid, self.exact).values
        return float(np.sqrt(traj.grid.integrate((traj.values - ref) ** 2)))


@dataclass
class ConvergenceResult:
    counts: list[int]
    spacings: list[float]
    errors: list[float]
    orders: list[float]
    monotone: bool

    def rows(self):
        out = []
        for k, (m, h, e) in enumerate(zip(self.counts, self.spacings, self.errors)):
            out.append({"level": k, "nodes": m, "h": h, "l2_error": e,
                        "order": self.orders[k - 1] if k else float("nan")})
        return out


def convergence_study(mp: ManufacturedProblem, levels: int = 3, base: int = 9,
                      fixed: dict[int, int] | None = None) -> ConvergenceResult:
    """L2 errors against the exact solution under joint refinement of all axes.

    Level ``k`` uses ``(base - 1) * 2**k + 1`` nodes per axis, except for the
    axes listed in ``fixed`` (axis index -> node count), which is useful when
    the exact solution is polynomial of low degree along them.  A non-monotone
    error sequence is reported through a warning.
    """
    if levels < 3:
        raise ValueError("convergence study needs levels >= 3")
    counts, spacings, errors = [], [], []
    for k in range(levels):
        m = (base - 1) * 2**k + 1
        res = [fixed.get(ax, m) if fixed else m for ax in range(mp.spec.spatial_dim + 3)]
        prob = mp.problem(res)
        traj = solve_forward(prob)
        counts.append(m)
        spacings.append(max(h for ax, h in enumerate(prob.grid.spacings)
                            if not fixed or ax not in fixed))
        errors.append(mp.error(traj))
    orders = [
        float(np.log(errors[k] / errors[k + 1]) / np.log(spacings[k] / spacings[k + 1]))
        if errors[k + 1] > 0 and errors[k] > 0 else float("inf")
        for k in range(levels - 1)
    ]
    monotone = all(errors[k + 1] <= errors[k] for k in range(levels - 1))
    if not monotone:
        warnings.warn(f"non-monotone error sequence in convergence study {mp.name}: {errors}")
    return ConvergenceResult(counts, spacings, errors, orders, monotone)


def export_trajectory(traj: Trajectory, out_dir: str | Path, time_indices: Sequence[int],
                      preset: str = "") -> list[Path]:
    """One CSV per requested time slice plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    g = traj.grid
    names = (["x"] if g.n == 1 else ["x1", "x2"]) + ["a", "tau", "u"]
    written = []
    axes = list(g.x) + [g.a, g.tau]
    coords = np.meshgrid(*axes, indexing="ij")
    for n in time_indices:
        vals = traj.slice(n)
        path = out / f"slice_t{n:04d}.csv"
        cols = [c.ravel() for c in coords] + [vals.ravel()]
        with path.open("w") as fh:
            fh.write(",".join(names) + "\n")
            for row in zip(*cols):
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        written.append(path)
    manifest = {
        "grid": g.to_dict(),
        "coefficients": preset,
        "slices": [{"index": int(n), "t": float(g.t[n]), "file": f"slice_t{n:04d}.csv"} for n in time_indices],
        "diagnostics": {
            "total_population": [float(v) for v in traj.total_population],
            "max_norm": [float(v) for v in traj.max_norm],
            "initial_mismatch": traj.initial_mismatch,
        },
    }
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(mpath)
    return written
