"""Finite-difference operators on grid fields.

``K``       diffusion-taxis-mortality part, centered differences in x with the
            zero-flux condition realized by mirror ghost nodes,
``L0``      transport part in divergence form ``d_t u + d_a u + d_tau(g u)``,
``L0~``     non-divergence transport ``d_t u + d_a u + g d_tau u``.

Derivatives along (t, a, tau) are centered in the interior and second-order
one-sided on the faces.  ``L0~`` is defined as ``L0 - g' u`` with the analytic
``g'`` so that the product rule holds exactly on the grid.
"""

from __future__ import annotations

import numpy as np

from .coefficients import CoefficientSet, CoefficientError
from .domain import Field, Grid


def diff1(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """First derivative, centered inside and one-sided (2nd order) at the ends."""
    return np.gradient(values, h, axis=axis, edge_order=2)


def _reflect_pad(values: np.ndarray, axes) -> np.ndarray:
    pad = [(0, 0)] * values.ndim
    for ax in axes:
        pad[ax] = (1, 1)
    return np.pad(values, pad, mode="reflect")


def _shifted(padded: np.ndarray, offsets: dict[int, int], nd: int) -> np.ndarray:
    """View of a 1-padded array shifted by ``offsets`` along the padded axes."""
    idx = []
    for ax in range(nd):
        if ax in offsets:
            o = offsets[ax]
            stop = padded.shape[ax] - 1 + o
            idx.append(slice(1 + o, stop))
        else:
            idx.append(slice(None))
    return padded[tuple(idx)]


def spatial_derivatives(values: np.ndarray, grid: Grid, boundary: str = "neumann"):
    """First and second spatial derivatives.

    Returns ``(grad, hess)`` with ``grad[k]`` and ``hess[i][j]`` arrays of the
    grid shape.  With ``boundary="neumann"`` ghost nodes mirror the first
    interior node; with ``"one-sided"`` first derivatives on the boundary use
    second-order one-sided stencils (second derivatives still use mirrors).
    """
    n = grid.n
    nd = values.ndim
    xaxes = list(range(n))
    P = _reflect_pad(values, xaxes)
    centre = _shifted(P, {ax: 0 for ax in xaxes}, nd)
    grad = []
    for k in xaxes:
        if boundary == "one-sided":
            grad.append(diff1(values, grid.hx[k], k))
            continue
        base = {ax: 0 for ax in xaxes}
        plus = _shifted(P, {**base, k: 1}, nd)
        minus = _shifted(P, {**base, k: -1}, nd)
        grad.append((plus - minus) / (2 * grid.hx[k]))
    hess = [[None] * n for _ in range(n)]
    for i in xaxes:
        base = {ax: 0 for ax in xaxes}
        plus = _shifted(P, {**base, i: 1}, nd)
        minus = _shifted(P, {**base, i: -1}, nd)
        hess[i][i] = (plus - 2 * centre + minus) / grid.hx[i] ** 2
        for j in xaxes:
            if j <= i:
                continue
            pp = _shifted(P, {**base, i: 1, j: 1}, nd)
            pm = _shifted(P, {**base, i: 1, j: -1}, nd)
            mp = _shifted(P, {**base, i: -1, j: 1}, nd)
            mm = _shifted(P, {**base, i: -1, j: -1}, nd)
            hess[i][j] = hess[j][i] = (pp - pm - mp + mm) / (4 * grid.hx[i] * grid.hx[j])
    return grad, hess


def principal_part(values: np.ndarray, grid: Grid, A: np.ndarray) -> np.ndarray:
    """``sum_ij a_ij d_i d_j u`` with ``A`` of shape ``(n, n, *x_shape)``."""
    _, hess = spatial_derivatives(values, grid)
    out = np.zeros(values.shape)
    pad = (1,) * 3
    for i in range(grid.n):
        for j in range(grid.n):
            out += A[i, j].reshape(A.shape[2:] + pad) * hess[i][j]
    return out


def _diffusion(grid: Grid, coeffs: CoefficientSet) -> np.ndarray:
    if coeffs.n != grid.n:
        raise CoefficientError(f"coefficients are {coeffs.n}-d but grid is {grid.n}-d")
    return coeffs.diffusion_matrix(np.meshgrid(*grid.x, indexing="ij"))


def apply_K(u: Field, coeffs: CoefficientSet) -> Field:
    """``sum a_ij d_i d_j u - sum b_k d_k u - c u``."""
    grid = u.grid
    A = _diffusion(grid, coeffs)
    mesh = grid.mesh()
    grad, hess = spatial_derivatives(u.values, grid)
    out = np.zeros(grid.shape)
    pad = (1,) * 3
    for i in range(grid.n):
        for j in range(grid.n):
            out += A[i, j].reshape(A.shape[2:] + pad) * hess[i][j]
    b = coeffs.drift_vector(mesh, grid.shape)
    for k in range(grid.n):
        out -= b[k] * grad[k]
    out -= coeffs.reaction_field(mesh, grid.shape) * u.values
    return Field(grid, out, "Ku")


def _transport(values: np.ndarray, grid: Grid) -> np.ndarray:
    return diff1(values, grid.ht, grid.t_axis) + diff1(values, grid.ha, grid.a_axis)


def apply_L0(u: Field, coeffs: CoefficientSet) -> Field:
    grid = u.grid
    g = coeffs.growth_values(grid.coord(grid.tau_axis))
    out = _transport(u.values, grid) + diff1(g * u.values, grid.htau, grid.tau_axis)
    return Field(grid, out, "L0u")


def apply_L0_tilde(u: Field, coeffs: CoefficientSet) -> Field:
    grid = u.grid
    gp = coeffs.growth_prime_values(grid.coord(grid.tau_axis))
    return Field(grid, apply_L0(u, coeffs).values - gp * u.values, "L0~u")


def apply_L0_minus_K(u: Field, coeffs: CoefficientSet) -> Field:
    return Field(u.grid, apply_L0(u, coeffs).values - apply_K(u, coeffs).values, "(L0-K)u")


def birth_kernel_table(grid: Grid, coeffs: CoefficientSet) -> np.ndarray:
    """``beta(x, a, tau, tau~)`` sampled as ``(*x_shape, n_a, n_tau, n_tau)``."""
    n = grid.n
    xs = [grid.x[k].reshape([-1 if j == k else 1 for j in range(n)] + [1, 1, 1]) for k in range(n)]
    a = grid.a.reshape((1,) * n + (-1, 1, 1))
    tau = grid.tau.reshape((1,) * n + (1, -1, 1))
    tau_t = grid.tau.reshape((1,) * n + (1, 1, -1))
    shape = tuple(len(ax) for ax in grid.x) + (len(grid.a), len(grid.tau), len(grid.tau))
    kern = np.broadcast_to(coeffs.birth(*xs, a, tau, tau_t), shape)
    if not np.all(np.isfinite(kern)):
        raise CoefficientError("birth kernel evaluated to non-finite values")
    return np.array(kern, dtype=float)


def birth_integral(u, coeffs: CoefficientSet, grid: Grid | None = None, kernel=None) -> np.ndarray:
    """Trapezoid value of ``int_0^amax int beta(x,a,tau,tau~) u(x,t,a,tau~) dtau~ da``.

    ``u`` is a full :class:`Field` (result shape ``(*x, n_t, n_tau)``) or an
    array sampled at one time, shape ``(*x, n_a, n_tau)`` (result
    ``(*x, n_tau)``).  A precomputed ``kernel`` table may be passed.
    """
    if isinstance(u, Field):
        grid, vals = u.grid, u.values
    else:
        vals = np.asarray(u, dtype=float)
    if kernel is None:
        kernel = birth_kernel_table(grid, coeffs)
    wa = grid.axis_weights(grid.a_axis)
    wt = grid.axis_weights(grid.tau_axis)
    kw = kernel * wa[:, None, None] * wt[None, None, :]
    nx = int(np.prod([len(ax) for ax in grid.x]))
    xshape = tuple(len(ax) for ax in grid.x)
    kw = kw.reshape((nx,) + kw.shape[grid.n:])
    if vals.ndim == grid.ndim:
        v = vals.reshape((nx,) + vals.shape[grid.n:])
        out = np.einsum("Xajk,Xtak->Xtj", kw, v)
    else:
        v = vals.reshape((nx,) + vals.shape[grid.n:])
        out = np.einsum("Xajk,Xak->Xj", kw, v)
    return out.reshape(xshape + out.shape[1:])
