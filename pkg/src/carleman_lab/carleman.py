"""Weighted estimate for the transport-diffusion operator.

The weight is ``phi = exp(lam * psi)`` with
``psi = d(x) - beta_w * (|t - t0|^2 + |a - a0|^2 + |tau - tau0|^2)``.
All derivatives of ``psi`` are analytic; only the test functions are
differentiated on the grid.

Integrals carrying ``exp(2 s phi)`` are accumulated in log space, so every
report stores log-magnitudes and derives plain values and ratios from them.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import binary_dilation, generate_binary_structure
from scipy.special import logsumexp

from .coefficients import CoefficientSet
from .domain import DomainSpec, Field, Grid
from .operators import (
    apply_K,
    apply_L0,
    apply_L0_tilde,
    principal_part,
    spatial_derivatives,
)
from .weights import WeightBase


class SupportError(ValueError):
    pass


@dataclass(frozen=True)
class CarlemanWeight:
    base: WeightBase
    beta_w: float
    lam: float
    s: float
    center: tuple[float, float, float]

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        if not self.s >= 0:
            raise ValueError("s must be >= 0")
        if not self.beta_w > 0:
            raise ValueError("beta_w must be > 0")

    def with_params(self, **kw) -> "CarlemanWeight":
        return replace(self, **kw)

    def offsets2(self, t, a, tau):
        t0, a0, tau0 = self.center
        return (t - t0) ** 2 + (a - a0) ** 2 + (tau - tau0) ** 2

    def psi(self, *point) -> np.ndarray:
        x, (t, a, tau) = point[:-3], point[-3:]
        return self.base.value(*x) - self.beta_w * self.offsets2(t, a, tau)

    def phi(self, *point) -> np.ndarray:
        return np.exp(self.lam * self.psi(*point))

    def L0_tilde_psi(self, t, a, tau, g) -> np.ndarray:
        t0, a0, tau0 = self.center
        return -2.0 * self.beta_w * ((t - t0) + (a - a0) + g * (tau - tau0))


def eval_weight(weight: CarlemanWeight, point: Sequence[float]) -> tuple[float, float]:
    """``(psi, phi)`` at one point ``(x..., t, a, tau)``."""
    psi = float(weight.psi(*point))
    return psi, math.exp(weight.lam * psi)


def sigma_field(coeffs: CoefficientSet, weight: CarlemanWeight, grid: Grid, mask=None):
    """``sigma(x) = sum a_ij d_i d d_j d`` on the spatial nodes and its minimum.

    ``mask`` (boolean over spatial nodes) restricts the minimum to a region
    of interest.
    """
    xs = np.meshgrid(*grid.x, indexing="ij")
    A = coeffs.diffusion_matrix(xs)
    gd = [np.broadcast_to(gk, xs[0].shape) for gk in weight.base.grad(*xs)]
    sig = sum(A[i, j] * gd[i] * gd[j] for i in range(grid.n) for j in range(grid.n))
    region = sig if mask is None else sig[mask]
    return sig, float(np.min(region))


def _weight_pieces(grid: Grid, weight: CarlemanWeight, coeffs: CoefficientSet):
    """Analytic ``phi``, ``sigma``, ``sum a_ij d_ij d``, ``L0~ psi`` and ``A grad d``."""
    n = grid.n
    mesh = grid.mesh()
    xs = mesh[:n]
    t, a, tau = mesh[n:]
    g = coeffs.growth_values(tau)
    phi = weight.phi(*mesh)
    xmesh = np.meshgrid(*grid.x, indexing="ij")
    A = coeffs.diffusion_matrix(xmesh)
    gd = [np.broadcast_to(gk, xmesh[0].shape) for gk in weight.base.grad(*xmesh)]
    hd = weight.base.hess(*xmesh)
    pad = (1, 1, 1)
    sigma = sum(A[i, j] * gd[i] * gd[j] for i in range(n) for j in range(n)).reshape(
        xmesh[0].shape + pad
    )
    a_hess_d = sum(
        A[i, j] * np.broadcast_to(hd[i][j], xmesh[0].shape) for i in range(n) for j in range(n)
    ).reshape(xmesh[0].shape + pad)
    a_grad_d = [
        sum(A[i, j] * gd[i] for i in range(n)).reshape(xmesh[0].shape + pad) for j in range(n)
    ]
    l0psi = weight.L0_tilde_psi(t, a, tau, g)
    return phi, sigma, a_hess_d, a_grad_d, l0psi, A


def _check_support(w: Field, cells: int = 2) -> None:
    vals = w.values
    for ax in range(vals.ndim):
        m = vals.shape[ax]
        edge = np.concatenate([np.arange(cells), np.arange(m - cells, m)])
        if np.any(np.take(vals, edge, axis=ax) != 0):
            raise SupportError(f"test function not compactly supported (axis {ax})")


def apply_L(u: np.ndarray, grid: Grid, coeffs: CoefficientSet, A=None) -> np.ndarray:
    """``L0~ u - sum a_ij d_i d_j u``."""
    if A is None:
        A = coeffs.diffusion_matrix(np.meshgrid(*grid.x, indexing="ij"))
    f = Field(grid, u)
    return apply_L0_tilde(f, coeffs).values - principal_part(u, grid, A)


@dataclass(frozen=True)
class ConjugatedTerms:
    """The seven terms of the expanded conjugated operator, in order."""

    transport: np.ndarray
    principal: np.ndarray
    cross: np.ndarray
    zeroth_s2: np.ndarray
    zeroth_sigma: np.ndarray
    zeroth_hess: np.ndarray
    zeroth_psi: np.ndarray
    A1: np.ndarray
    a1_factor: np.ndarray

    def expanded(self) -> np.ndarray:
        return (self.transport + self.principal + self.cross + self.zeroth_s2
                + self.zeroth_sigma + self.zeroth_hess + self.zeroth_psi)


def conjugated_terms(w: Field, weight: CarlemanWeight, coeffs: CoefficientSet) -> ConjugatedTerms:
    grid = w.grid
    s, lam = weight.s, weight.lam
    phi, sigma, a_hess_d, a_grad_d, l0psi, A = _weight_pieces(grid, weight, coeffs)
    wv = w.values
    grad, _ = spatial_derivatives(wv, grid)
    transport = apply_L0_tilde(w, coeffs).values
    principal = -principal_part(wv, grid, A)
    cross = 2 * s * lam * phi * sum(a_grad_d[j] * grad[j] for j in range(grid.n))
    zeroth_s2 = -(s**2) * lam**2 * phi**2 * sigma * wv
    c_sigma = s * lam**2 * phi * sigma
    c_hess = s * lam * phi * a_hess_d
    c_psi = -s * lam * phi * l0psi
    A1 = c_sigma + c_hess + c_psi
    a1 = sigma + (a_hess_d - l0psi) / lam
    return ConjugatedTerms(
        transport, principal, cross, zeroth_s2, c_sigma * wv, c_hess * wv, c_psi * wv, A1,
        np.broadcast_to(a1, grid.shape),
    )


_EXP_RANGE = 700.0  # e^{-700} is still a normal double


def conjugated_apply(w: Field, weight: CarlemanWeight, coeffs: CoefficientSet):
    """``(direct, expanded)``: ``e^{s phi} L(e^{-s phi} w)`` and its term-by-term expansion.

    The direct route rescales by ``e^{-s (phi - min phi)}`` over the stencil
    closure of the support and refuses to run when that factor would underflow.
    """
    _check_support(w)
    grid = w.grid
    phi = weight.phi(*grid.mesh())
    phi = np.broadcast_to(phi, grid.shape)
    support = binary_dilation(w.values != 0, generate_binary_structure(w.values.ndim, w.values.ndim))
    shift = float(phi[support].min()) if support.any() else 0.0
    spread = weight.s * (float(phi[support].max()) - shift) if support.any() else 0.0
    if spread > _EXP_RANGE:
        raise ValueError(
            f"direct conjugation out of floating-point range (s * spread of phi = {spread:.4g}); "
            "use the expanded form"
        )
    scale = np.exp(-weight.s * (phi - shift))
    direct = apply_L(w.values * scale, grid, coeffs) / scale
    expanded = conjugated_terms(w, weight, coeffs).expanded()
    return Field(grid, direct, "Pw_direct"), Field(grid, expanded, "Pw_expanded")


def decompose_P(w: Field, weight: CarlemanWeight, coeffs: CoefficientSet):
    """``(P1 w, P2 w, a1_factor)`` with ``P1 + P2`` the expanded conjugated operator."""
    _check_support(w)
    T = conjugated_terms(w, weight, coeffs)
    P1 = T.principal + T.zeroth_s2 + T.A1 * w.values
    P2 = T.transport + T.cross
    return Field(w.grid, P1, "P1w"), Field(w.grid, P2, "P2w"), T.a1_factor


# -- the weighted inequality ---------------------------------------------------------

@dataclass(frozen=True)
class BumpPieces:
    """Weight-independent integrand pieces of one test function."""

    grid: Grid
    transport2: np.ndarray  # |L0 u|^2
    grad2: np.ndarray  # |grad_x u|^2
    u2: np.ndarray
    residual2: np.ndarray  # |(L0 - K) u|^2
    log_quad: np.ndarray  # log trapezoid weights


def bump_pieces(u: Field, coeffs: CoefficientSet, check_support: bool = True) -> BumpPieces:
    if check_support:
        _check_support(u)
    grid = u.grid
    L0u = apply_L0(u, coeffs).values
    Ku = apply_K(u, coeffs).values
    grad, _ = spatial_derivatives(u.values, grid)
    return BumpPieces(
        grid,
        L0u**2,
        sum(gk**2 for gk in grad),
        u.values**2,
        (L0u - Ku) ** 2,
        np.log(grid.trapezoid_weights()),
    )


def _log_integral(log_w: np.ndarray, values: np.ndarray) -> float:
    pos = values > 0
    if not pos.any():
        return -math.inf
    return float(logsumexp(log_w[pos] + np.log(values[pos])))


@dataclass(frozen=True)
class CarlemanReport:
    bump_id: int
    s: float
    lam: float
    log_lhs_transport: float
    log_lhs_gradient: float
    log_lhs_zeroth: float
    log_rhs: float
    status: str = "ok"

    @property
    def lhs_transport(self) -> float:
        return _safe_exp(self.log_lhs_transport)

    @property
    def lhs_gradient(self) -> float:
        return _safe_exp(self.log_lhs_gradient)

    @property
    def lhs_zeroth(self) -> float:
        return _safe_exp(self.log_lhs_zeroth)

    @property
    def rhs(self) -> float:
        return _safe_exp(self.log_rhs)

    @property
    def log_lhs(self) -> float:
        parts = [self.log_lhs_transport, self.log_lhs_gradient, self.log_lhs_zeroth]
        if all(p == -math.inf for p in parts):
            return -math.inf
        return float(logsumexp(parts))

    @property
    def ratio(self) -> float:
        """lhs / rhs, NaN when the right side vanishes."""
        if self.log_rhs == -math.inf:
            return math.nan
        return _safe_exp(self.log_lhs - self.log_rhs)

    def row(self) -> dict:
        return {
            "bump_id": self.bump_id,
            "s": self.s,
            "lambda": self.lam,
            "lhs_transport": self.lhs_transport,
            "lhs_gradient": self.lhs_gradient,
            "lhs_zeroth": self.lhs_zeroth,
            "rhs": self.rhs,
            "ratio": self.ratio,
        }


def _safe_exp(x: float) -> float:
    if x == -math.inf:
        return 0.0
    return math.exp(x) if x < 709.0 else math.inf


def _log_phi(grid: Grid, weight: CarlemanWeight) -> tuple[np.ndarray, np.ndarray]:
    psi = np.broadcast_to(weight.psi(*grid.mesh()), grid.shape)
    return weight.lam * psi, np.exp(weight.lam * psi)


def carleman_terms(pieces: BumpPieces, weight: CarlemanWeight, bump_id: int = 0) -> CarlemanReport:
    s, lam = weight.s, weight.lam
    log_phi, phi = _log_phi(pieces.grid, weight)
    base = pieces.log_quad + 2 * s * phi
    ls, ll = math.log(s), math.log(lam)
    return CarlemanReport(
        bump_id,
        s,
        lam,
        _log_integral(base - ls - log_phi, pieces.transport2),
        _log_integral(base + ls + 2 * ll + log_phi, pieces.grad2),
        _log_integral(base + 3 * ls + 4 * ll + 3 * log_phi, pieces.u2),
        _log_integral(base, pieces.residual2),
    )


def carleman_lhs(u: Field, weight: CarlemanWeight, coeffs: CoefficientSet):
    """The three left-side integrals ``(transport, gradient, zeroth)``."""
    rep = carleman_terms(bump_pieces(u, coeffs), weight)
    return rep.lhs_transport, rep.lhs_gradient, rep.lhs_zeroth


def carleman_rhs(u: Field, weight: CarlemanWeight, coeffs: CoefficientSet) -> float:
    """``int |(L0 - K) u|^2 e^{2 s phi}`` (no constant)."""
    return carleman_terms(bump_pieces(u, coeffs), weight).rhs


# -- test functions ---------------------------------------------------------------

@dataclass(frozen=True)
class Bump:
    """Tensor product of ``(1 - r^2)^4`` kernels, zero outside the box."""

    center: tuple[float, ...]
    radii: tuple[float, ...]
    amplitude: float = 1.0

    def __call__(self, *coords):
        out = self.amplitude
        for y, c, r in zip(coords, self.center, self.radii):
            z = 1.0 - ((y - c) / r) ** 2
            out = out * np.where(z > 0, z, 0.0) ** 4
        return out

    def sample(self, grid: Grid, label: str = "bump") -> Field:
        return Field.from_function(grid, self, label)


def random_bumps(spec: DomainSpec, count: int, seed: int = 0, margin: float = 0.1,
                 radius_range: tuple[float, float] = (0.15, 0.35)) -> list[Bump]:
    """Bumps whose supports stay ``margin`` (relative) away from the box faces."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        centre, radii = [], []
        for lo, hi in spec.extents:
            L = hi - lo
            r = rng.uniform(*radius_range) * L
            r = min(r, 0.5 * L - margin * L)
            c = rng.uniform(lo + margin * L + r, hi - margin * L - r)
            centre.append(float(c))
            radii.append(float(r))
        out.append(Bump(tuple(centre), tuple(radii), float(rng.uniform(0.5, 2.0))))
    return out


# -- sweeps -------------------------------------------------------------------------

@dataclass
class SweepResult:
    reports: list[CarlemanReport]
    growth: dict = field(default_factory=dict)  # (bump_id, lam) -> ratio(s_max)/ratio(s_prev)
    divergence_factor: float = 1.5

    @property
    def diverged(self) -> list:
        return [k for k, v in sorted(self.growth.items()) if not v <= self.divergence_factor]

    @property
    def ok(self) -> bool:
        return not self.diverged

    def rows(self) -> list[dict]:
        return [r.row() for r in self.reports]


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CARLEMAN_LAB_THREADS", "1")))
    except ValueError:
        return 1


def sweep_verify(bumps: Sequence[Field], s_values: Sequence[float], lambda_values: Sequence[float],
                 weight: CarlemanWeight, coeffs: CoefficientSet,
                 divergence_factor: float = 1.5) -> SweepResult:
    """Evaluate lhs/rhs for every bump and ``(s, lambda)``.

    ``weight`` supplies ``d``, ``beta_w`` and the centre; its own ``s`` and
    ``lam`` are overridden by the sweep.  A bump whose right side vanishes is
    reported with status ``"degenerate test function"`` and skipped.
    """
    s_sorted = sorted(float(s) for s in s_values)

    def one_bump(item):
        k, u = item
        pieces = bump_pieces(u, coeffs)
        if not np.any(pieces.residual2 > 0):
            nan = -math.inf
            return [CarlemanReport(k, s, float(lam), nan, nan, nan, nan, "degenerate test function")
                    for lam in lambda_values for s in s_sorted]
        reps = []
        for lam in lambda_values:
            for s in s_sorted:
                reps.append(carleman_terms(pieces, weight.with_params(s=s, lam=float(lam)), k))
        return reps

    items = list(enumerate(bumps))
    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            batches = list(ex.map(one_bump, items))
    else:
        batches = [one_bump(it) for it in items]
    reports = sorted((r for b in batches for r in b), key=lambda r: (r.bump_id, r.s, r.lam))
    growth = {}
    if len(s_sorted) >= 2:
        by_key = {(r.bump_id, r.lam, r.s): r for r in reports if r.status == "ok"}
        for (k, lam, s), r in by_key.items():
            if s == s_sorted[-1]:
                prev = by_key[(k, lam, s_sorted[-2])]
                growth[(k, lam)] = r.ratio / prev.ratio
    return SweepResult(reports, growth, divergence_factor)


# -- transport adjoint -----------------------------------------------------------------

def adjoint_check(u: Field, v: Field, coeffs: CoefficientSet) -> float:
    """``|int u (L0~ v) + int (L0 u) v|`` by trapezoid quadrature."""
    grid = u.grid
    a = grid.integrate(u.values * apply_L0_tilde(v, coeffs).values)
    b = grid.integrate(apply_L0(u, coeffs).values * v.values)
    return abs(a + b)
