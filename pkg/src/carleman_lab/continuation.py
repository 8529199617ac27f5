"""Lateral Cauchy data, weighted quasi-reversibility and the decay table.

The reconstruction minimizes over grid functions ``v`` on ``D``

    sum_D q |L0 v - K v|^2 e^{2 s (phi - phi_max)}
      + penalty * sum_Gamma q (|v - u_data|^2 + |d_n v - du_data|^2)
      + alpha * ||v||^2_{H^{1,0}},

where ``q`` are trapezoid weights.  The weights are normalized by their
largest value on ``D`` so that ``penalty`` and ``alpha`` are relative to the
heaviest residual row.  The normal equations are SPD and are solved by
Jacobi-preconditioned conjugate gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, spsolve
from scipy.special import logsumexp

from .coefficients import CoefficientSet
from .domain import Field, Grid
from .forward import Trajectory
from .geometry import UCGeometry, cutoff_pieces, h10_norm
from .operators import spatial_derivatives


class ContinuationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CauchyData:
    """Traces on one ``Gamma`` face; arrays are indexed ``(t, a, tau)``.

    ``normal`` is the outward normal derivative from a second-order one-sided
    stencil.  In one space dimension there is no tangential component.
    """

    grid: Grid
    face: tuple[int, str]
    index: int
    value: np.ndarray
    normal: np.ndarray
    noise: float = 0.0

    def __post_init__(self):
        for arr in (self.value, self.normal):
            if not np.all(np.isfinite(arr)):
                raise ContinuationError("Cauchy data must be finite")
        if self.value.shape != self.normal.shape:
            raise ContinuationError("value and normal traces differ in shape")


def _face_index(grid: Grid, geo: UCGeometry, face) -> int:
    axis, side = face
    lo, hi = geo.spec.omega[axis]
    target = hi if side == "hi" else lo
    xs = grid.x[axis]
    k = int(np.argmin(np.abs(xs - target)))
    if abs(xs[k] - target) > 1e-9 * max(1.0, abs(target)):
        raise ContinuationError(f"Gamma face {face} is not aligned with the grid")
    if (side == "hi" and k != len(xs) - 1) or (side == "lo" and k != 0):
        raise ContinuationError("grid extends beyond Omega across Gamma")
    return k


def _one_sided_normal(values: np.ndarray, axis: int, h: float, side: str) -> np.ndarray:
    take = lambda i: np.take(values, i, axis=axis)
    if side == "hi":
        return (3 * take(-1) - 4 * take(-2) + take(-3)) / (2 * h)
    return -(-3 * take(0) + 4 * take(1) - take(2)) / (2 * h)


def extract_cauchy(traj: Trajectory | Field, geo: UCGeometry, noise: float = 0.0,
                   seed: int = 0) -> list[CauchyData]:
    """``u`` and ``d_n u`` on every ``Gamma`` face, with optional noise.

    Noise is additive, uniform in ``[-1, 1]`` times ``noise`` times the max
    magnitude of the respective trace.
    """
    field_ = traj.as_field() if isinstance(traj, Trajectory) else traj
    grid = field_.grid
    if grid.n != 1:
        raise ContinuationError("Cauchy data extraction supports one space dimension")
    rng = np.random.default_rng(seed)
    out = []
    for face in geo.gamma:
        axis, side = face
        k = _face_index(grid, geo, face)
        value = np.take(field_.values, k, axis=axis).copy()
        normal = _one_sided_normal(field_.values, axis, grid.hx[axis], side)
        if noise > 0:
            for arr in (value, normal):
                scale = float(np.max(np.abs(arr)))
                arr += noise * scale * rng.uniform(-1.0, 1.0, arr.shape)
        out.append(CauchyData(grid, face, k, value, normal, noise))
    return out


# -- sparse operators -----------------------------------------------------------------

def _gradient_matrix(m: int, h: float) -> sp.csr_matrix:
    """Matrix of ``np.gradient(., h, edge_order=2)`` on ``m`` nodes."""
    rows, cols, vals = [], [], []
    for i in range(1, m - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-0.5 / h, 0.5 / h]
    rows += [0, 0, 0, m - 1, m - 1, m - 1]
    cols += [0, 1, 2, m - 1, m - 2, m - 3]
    vals += [-1.5 / h, 2 / h, -0.5 / h, 1.5 / h, -2 / h, 0.5 / h]
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))


def _second_matrix(m: int, h: float) -> sp.csr_matrix:
    """Centered second difference (rows 0 and m-1 use mirror ghosts)."""
    main = np.full(m, -2.0)
    up = np.ones(m - 1)
    lo = np.ones(m - 1)
    up[0] = 2.0
    lo[-1] = 2.0
    return sp.diags([lo, main, up], [-1, 0, 1], format="csr") / h**2


def _centered_matrix(m: int, h: float) -> sp.csr_matrix:
    up = np.ones(m - 1)
    lo = -np.ones(m - 1)
    up[0] = 0.0
    lo[-1] = 0.0
    return sp.diags([lo, up], [-1, 1], format="csr") / (2 * h)


def _kron_axis(mats: list, axis: int, op) -> sp.csr_matrix:
    out = None
    for k, m in enumerate(mats):
        block = op if k == axis else sp.identity(m, format="csr")
        out = block if out is None else sp.kron(out, block, format="csr")
    return out


def residual_matrix(grid: Grid, coeffs: CoefficientSet) -> sp.csr_matrix:
    """Sparse ``L0 - K`` on the whole grid, matching :mod:`operators` stencils."""
    if grid.n != 1:
        raise ContinuationError("the residual matrix is implemented for one space dimension")
    dims = list(grid.shape)
    mesh = [np.broadcast_to(c, grid.shape).ravel() for c in grid.mesh()]
    x, t, a, tau = mesh
    Dt = _kron_axis(dims, 1, _gradient_matrix(dims[1], grid.ht))
    Da = _kron_axis(dims, 2, _gradient_matrix(dims[2], grid.ha))
    Dtau = _kron_axis(dims, 3, _gradient_matrix(dims[3], grid.htau))
    g = np.broadcast_to(coeffs.growth_values(tau), tau.shape)
    L0 = Dt + Da + Dtau @ sp.diags(g)
    A = coeffs.diffusion_matrix([x])[0, 0]
    b = coeffs.drift_vector(grid.mesh(), grid.shape)[0].ravel()
    c = coeffs.reaction_field(grid.mesh(), grid.shape).ravel()
    Dxx = _kron_axis(dims, 0, _second_matrix(dims[0], grid.hx[0]))
    Dx = _kron_axis(dims, 0, _centered_matrix(dims[0], grid.hx[0]))
    K = sp.diags(np.broadcast_to(A, x.shape)) @ Dxx - sp.diags(b) @ Dx - sp.diags(c)
    return (L0 - K).tocsr()


def _dilate(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    for ax in range(mask.ndim):
        out[tuple(slice(1, None) if k == ax else slice(None) for k in range(mask.ndim))] |= \
            mask[tuple(slice(None, -1) if k == ax else slice(None) for k in range(mask.ndim))]
        out[tuple(slice(None, -1) if k == ax else slice(None) for k in range(mask.ndim))] |= \
            mask[tuple(slice(1, None) if k == ax else slice(None) for k in range(mask.ndim))]
    return out


@dataclass
class ContinuationResult:
    field: Field
    residual_norm: float
    mismatch_norm: float
    h10_norm: float
    iterations: int
    alpha: float
    s: float
    interior_error: float | None = None
    extras: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {
            "alpha": self.alpha,
            "s": self.s,
            "residual": self.residual_norm,
            "mismatch": self.mismatch_norm,
            "interior_error": math.nan if self.interior_error is None else self.interior_error,
        }


def relative_error(v: Field, truth: Field, mask: np.ndarray) -> float:
    grid = truth.grid
    num = grid.integrate(np.where(mask, (v.values - truth.values) ** 2, 0.0))
    den = grid.integrate(np.where(mask, truth.values**2, 0.0))
    if den <= 0:
        raise ContinuationError("truth vanishes on the comparison region")
    return math.sqrt(num / den)


def reconstruct(data: list[CauchyData], geo: UCGeometry, coeffs: CoefficientSet,
                alpha: float, s: float = 8.0, penalty: float = 1e6,
                truth: Field | None = None, tol: float = 1e-6,
                maxiter: int = 100_000, solver: str = "cg") -> ContinuationResult:
    """Weighted quasi-reversibility reconstruction on ``D``.

    Unknowns live on ``D`` dilated by one node.  Residual rows are the nodes
    of ``D`` strictly inside ``Omega`` in x; data rows are the ``Gamma`` nodes
    whose one-sided normal stencil stays in the unknown set.  ``solver`` is
    ``"cg"`` (Jacobi-preconditioned) or ``"direct"`` (sparse LU, a cross-check
    for small grids).  ``truth`` enables the interior error on
    ``Omega0 x B(p, eps/sqrt(N))``.
    """
    if not alpha > 0:
        raise ContinuationError("alpha must be > 0")
    if not data:
        raise ContinuationError("no Cauchy data")
    grid = data[0].grid
    inD = geo.D_mask(grid)
    xi = np.broadcast_to(grid.coord(0), grid.shape)
    lo, hi = grid.x[0][0], grid.x[0][-1]
    rows = inD & (xi > lo) & (xi < hi)
    unknown = _dilate(inD)
    if not rows.any():
        raise ContinuationError("region D contains no interior nodes")

    q = grid.trapezoid_weights()
    phi = np.broadcast_to(geo.phi(*grid.mesh()), grid.shape)
    log_w = 2.0 * s * phi + np.log(q)
    log_w = log_w - float(np.max(log_w[rows]))
    w_rows = np.exp(log_w[rows])

    R = residual_matrix(grid, coeffs)
    ridx = np.flatnonzero(rows.ravel())
    uidx = np.flatnonzero(unknown.ravel())
    Rr = R[ridx]
    if Rr[:, np.flatnonzero(~unknown.ravel())].nnz:
        raise ContinuationError("residual stencil leaves the unknown set")
    A = Rr[:, uidx]
    pos = -np.ones(int(np.prod(grid.shape)), int)
    pos[uidx] = np.arange(len(uidx))

    # data rows on Gamma: value and one-sided normal derivative
    B_rows, b_vals, b_w = [], [], []
    face_q = None
    for cd in data:
        axis, side = cd.face
        h = grid.hx[axis]
        m = grid.shape[axis]
        sel = np.take(unknown, cd.index, axis=axis)
        idx_face = np.argwhere(sel)
        qf = np.ones(sel.shape)
        for k, axw in enumerate((grid.t_axis, grid.a_axis, grid.tau_axis)):
            shp = [1, 1, 1]
            shp[k] = -1
            qf = qf * grid.axis_weights(axw).reshape(shp)
        nodes = [cd.index, cd.index - 1, cd.index - 2] if side == "hi" else [0, 1, 2]
        coef = [1.5 / h, -2.0 / h, 0.5 / h] if side == "hi" else [1.5 / h, -2.0 / h, 0.5 / h]
        for j in idx_face:
            j = tuple(j)
            flats = [np.ravel_multi_index((nd,) + j, grid.shape) for nd in nodes]
            if np.any(pos[flats] < 0):
                continue  # face node at the rim of D: its normal stencil is not available
            flat = flats[0]
            B_rows.append({pos[flat]: 1.0})
            b_vals.append(cd.value[j])
            b_w.append(qf[j])
            entry = {}
            for nd, cf in zip(nodes, coef):
                entry[pos[np.ravel_multi_index((nd,) + j, grid.shape)]] = cf
            B_rows.append(entry)
            b_vals.append(cd.normal[j])
            b_w.append(qf[j])
    if not B_rows:
        raise ContinuationError("Gamma does not meet D on this grid")
    rr, cc, vv = [], [], []
    for i, entry in enumerate(B_rows):
        for c_, v_ in entry.items():
            rr.append(i)
            cc.append(c_)
            vv.append(v_)
    B = sp.csr_matrix((vv, (rr, cc)), shape=(len(B_rows), len(uidx)))
    b_vals = np.asarray(b_vals)
    b_w = np.asarray(b_w) * penalty

    # H^{1,0} regularization over the unknown set
    dims = list(grid.shape)
    Dx = _kron_axis(dims, 0, _gradient_matrix(dims[0], grid.hx[0]))[uidx][:, uidx]
    qu = q.ravel()[uidx]

    M = (A.T @ sp.diags(w_rows) @ A + B.T @ sp.diags(b_w) @ B
         + alpha * (sp.diags(qu) + Dx.T @ sp.diags(qu) @ Dx)).tocsr()
    rhs = B.T @ (b_w * b_vals)
    precond = sp.diags(1.0 / M.diagonal())
    iters = [0]

    def count(_):
        iters[0] += 1

    if not np.any(rhs):
        sol = np.zeros(len(uidx))
    elif solver == "direct":
        sol = spsolve(M.tocsc(), rhs)
    else:
        sol, info = cg(M, rhs, rtol=tol, atol=0.0, maxiter=maxiter, M=precond, callback=count)
        if info != 0:
            raise ContinuationError(f"conjugate gradients did not converge in {maxiter} iterations")
    v = np.zeros(int(np.prod(grid.shape)))
    v[uidx] = sol
    vf = Field(grid, v.reshape(grid.shape), "v")

    res = A @ sol
    residual = math.sqrt(float(np.sum(w_rows * res**2)))
    mis = B @ sol - b_vals
    mismatch = math.sqrt(float(np.sum(np.asarray(b_w) / penalty * mis**2)))
    result = ContinuationResult(
        vf, residual, mismatch, h10_norm(vf, inD), iters[0], float(alpha), float(s)
    )
    if truth is not None:
        result.interior_error = relative_error(vf, truth, geo.observation_mask(grid))
    return result


def _profile(y):
    return np.exp(-(((y - 0.3) / 0.4) ** 2))


def forward_truth(geo: UCGeometry, coeffs: CoefficientSet, resolution) -> Trajectory:
    """Forward run with smooth data that is compatible at every inflow corner.

    Initial data ``q(x) S(a) S(tau)`` is continued into the age and size
    inflow faces as ``q(x) S(a - t) S(-t)``-type profiles, so the solution
    carries no characteristic discontinuity through ``D``.
    """
    from .domain import build_grid
    from .forward import ForwardProblem, solve_forward

    grid = build_grid(geo.spec, resolution)
    (x0, x1), = geo.spec.omega
    q = lambda x: 1.0 + 0.5 * np.cos(np.pi * (x - x0) / (x1 - x0))
    tau0 = geo.spec.tau_min
    prob = ForwardProblem(
        grid,
        coeffs,
        lambda x, a, tau: q(x) * _profile(a) * _profile(tau - tau0),
        age_boundary=lambda x, t, tau: q(x) * _profile(-t) * _profile(tau - tau0),
        size_boundary=lambda x, t, a: q(x) * _profile(a - t) * _profile(-t),
    )
    return solve_forward(prob)


# -- decay of the cut-off commutator ------------------------------------------------

@dataclass(frozen=True)
class DecayRow:
    s: float
    bound: float
    measured: float
    interior: float

    def row(self) -> dict:
        return {"s": self.s, "bound": self.bound, "measured": self.measured,
                "interior": self.interior}


def decay_bound(s: float, mu3: float, mu4: float) -> float:
    return math.exp(-2.0 * s * (mu4 - mu3))


def commutator(u: Field, geo: UCGeometry, coeffs: CoefficientSet) -> np.ndarray:
    """``L(chi u) - chi L u`` written with the analytic derivatives of ``chi``."""
    grid = u.grid
    cp = cutoff_pieces(geo, grid, coeffs)
    grad, _ = spatial_derivatives(u.values, grid)
    A = coeffs.diffusion_matrix(np.meshgrid(*grid.x, indexing="ij"))
    b = coeffs.drift_vector(grid.mesh(), grid.shape)
    pad = (1, 1, 1)
    out = cp.L0_tilde * u.values
    for i in range(grid.n):
        for j in range(grid.n):
            aij = A[i, j].reshape(A.shape[2:] + pad)
            out = out - 2 * aij * cp.grad_x[i] * grad[j] - aij * cp.hess_x[i][j] * u.values
        out = out - b[i] * cp.grad_x[i] * u.values
    return out


def decay_experiment(u: Trajectory | Field, geo: UCGeometry, coeffs: CoefficientSet,
                     s_values) -> list[DecayRow]:
    """Bound ``e^{-2 s (mu4 - mu3)}`` next to the measured commutator decay.

    ``measured(s) = int_D |[L, chi] u|^2 e^{2 s (phi - mu4)} / ||u||^2_{H^{1,0}(D)}``;
    the commutator lives on ``mu2 <= phi <= mu3`` so ``measured / bound`` can
    only stay bounded or fall as ``s`` grows.  ``interior`` is
    ``s^3 int |u|^2`` over ``Omega0 x B(p, eps/sqrt(N))``.
    """
    f = u.as_field() if isinstance(u, Trajectory) else u
    grid = f.grid
    inD = geo.D_mask(grid)
    mu3, mu4 = geo.mu[2], geo.mu[3]
    comm = commutator(f, geo, coeffs)
    phi = np.broadcast_to(geo.phi(*grid.mesh()), grid.shape)
    logq = np.log(grid.trapezoid_weights())
    pos = inD & (comm != 0)
    norm2 = h10_norm(f, inD) ** 2
    obs = geo.observation_mask(grid)
    u_obs = grid.integrate(np.where(obs, f.values**2, 0.0))
    rows = []
    for s in s_values:
        s = float(s)
        if pos.any() and norm2 > 0:
            lm = logsumexp(logq[pos] + np.log(comm[pos] ** 2) + 2 * s * (phi[pos] - mu4))
            measured = math.exp(lm) / norm2
        else:
            measured = 0.0
        rows.append(DecayRow(s, decay_bound(s, mu3, mu4), measured, s**3 * u_obs))
    return rows
