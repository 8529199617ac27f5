"""Unique-continuation geometry: level values, the region D and the cut-off.

Given a weight base ``d`` on an extension domain ``Omega1``, a physical
domain ``Omega`` with lateral data face ``Gamma`` and an observation
subdomain ``Omega0`` touching ``Gamma``, the construction picks

    beta_w = 0.75 ||d|| / eps^2,
    mu_k   = exp(lam * (k ||d|| / N - beta_w eps^2 / N)),   k = 1..4,
    D      = {x in closure(Omega), phi > mu_1},

with ``N`` the smallest integer > 1 such that ``d > 4 ||d|| / N`` on
``Omega0``, doubled for margin.  ``D`` is a node predicate; all integrals
over it are masked trapezoid sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .carleman import CarlemanWeight
from .coefficients import CoefficientSet
from .domain import DomainSpec, Field, Grid
from .operators import spatial_derivatives
from .weights import WeightBase, weight_catalog


class GeometryError(ValueError):
    pass


Box = tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class UCGeometry:
    name: str
    base: WeightBase
    spec: DomainSpec
    omega0: Box
    gamma: tuple[tuple[int, str], ...]  # (axis, "lo" | "hi") faces of Omega
    eps: float
    N: int
    lam: float
    beta_w: float
    center: tuple[float, float, float]
    mu: tuple[float, float, float, float]
    norm_d: float
    notes: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.spec.spatial_dim

    @property
    def inner_radius(self) -> float:
        return self.eps / math.sqrt(self.N)

    @property
    def outer_radius(self) -> float:
        return math.sqrt(2.0) * self.eps

    def weight(self, s: float = 1.0) -> CarlemanWeight:
        return CarlemanWeight(self.base, self.beta_w, self.lam, s, self.center)

    def phi(self, *point) -> np.ndarray:
        return self.weight().phi(*point)

    def offset(self, t, a, tau) -> np.ndarray:
        return np.sqrt(self.weight().offsets2(t, a, tau))

    def in_omega_closed(self, *x) -> np.ndarray:
        inside = True
        for xi, (lo, hi) in zip(x, self.spec.omega):
            inside = inside & (xi >= lo) & (xi <= hi)
        return np.asarray(inside)

    def in_D(self, *point) -> np.ndarray:
        x = point[: self.n]
        return self.in_omega_closed(*x) & (self.phi(*point) > self.mu[0])

    def in_omega0(self, *x) -> np.ndarray:
        inside = True
        for xi, (lo, hi) in zip(x, self.omega0):
            inside = inside & (xi > lo) & (xi < hi)
        return np.asarray(inside)

    def in_observation(self, *point) -> np.ndarray:
        """``Omega0 x B(p, eps / sqrt(N))``."""
        x, (t, a, tau) = point[: self.n], point[self.n:]
        return self.in_omega0(*x) & (self.offset(t, a, tau) < self.inner_radius)

    def gamma_distance(self, *x) -> np.ndarray:
        """Distance from ``x`` to the nearest ``Gamma`` face (as a hyperplane)."""
        out = np.inf
        for axis, side in self.gamma:
            lo, hi = self.spec.omega[axis]
            out = np.minimum(out, np.abs(x[axis] - (hi if side == "hi" else lo)))
        return np.asarray(out)

    def D_mask(self, grid: Grid) -> np.ndarray:
        return np.broadcast_to(self.in_D(*grid.mesh()), grid.shape)

    def observation_mask(self, grid: Grid) -> np.ndarray:
        return np.broadcast_to(self.in_observation(*grid.mesh()), grid.shape)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "weight_base": self.base.name,
            "omega": [list(b) for b in self.spec.omega],
            "omega0": [list(b) for b in self.omega0],
            "gamma": [list(g) for g in self.gamma],
            "eps": self.eps,
            "N": self.N,
            "lambda": self.lam,
            "beta_w": self.beta_w,
            "center": list(self.center),
            "mu": list(self.mu),
            "norm_d": self.norm_d,
            "notes": list(self.notes),
        }


def in_ball(point, p, r) -> np.ndarray:
    """``B(p, r)``: open Euclidean ball in the (t, a, tau) variables."""
    return np.sqrt(sum((np.asarray(c) - pc) ** 2 for c, pc in zip(point, p))) < r


def mu_levels(lam: float, norm_d: float, beta_eps2: float, N: int) -> tuple[float, ...]:
    return tuple(math.exp(lam * (k * norm_d / N - beta_eps2 / N)) for k in range(1, 5))


def _sample_box(box: Box, m: int, rng) -> list[np.ndarray]:
    return [rng.uniform(lo, hi, m) for lo, hi in box]


def _sample_ball3(p, r, m: int, rng) -> list[np.ndarray]:
    v = rng.normal(size=(3, m))
    v /= np.linalg.norm(v, axis=0)
    rad = r * rng.uniform(0, 1, m) ** (1.0 / 3.0)
    return [p[k] + rad * v[k] for k in range(3)]


def _min_d_on(base: WeightBase, box: Box, samples: int, rng) -> float:
    pts = _sample_box(box, samples, rng)
    # include the closure: corners of the box
    corners = np.array(np.meshgrid(*box, indexing="ij")).reshape(len(box), -1)
    pts = [np.concatenate([p, c]) for p, c in zip(pts, corners)]
    return float(np.min(base.value(*pts)))


def build_uc_geometry(base: WeightBase, spec: DomainSpec, omega0: Box, gamma, eps: float,
                      N: int | None = None, lam: float = 1.0,
                      center: tuple[float, float, float] | None = None,
                      name: str = "custom", samples: int = 4096, seed: int = 0) -> UCGeometry:
    """Assemble the geometry and check its preconditions.

    ``N=None`` selects the smallest admissible integer and doubles it.
    """
    n = spec.spatial_dim
    if base.n != n:
        raise GeometryError(f"weight base is {base.n}-d but the domain is {n}-d")
    if not eps > 0:
        raise GeometryError("eps must be > 0")
    if not lam > 0:
        raise GeometryError("lambda must be > 0")
    gamma = tuple((int(ax), str(side)) for ax, side in gamma)
    if not gamma:
        raise GeometryError("Gamma must contain at least one face")
    for ax, side in gamma:
        if side not in ("lo", "hi") or not 0 <= ax < n:
            raise GeometryError(f"bad Gamma face {(ax, side)}")

    # closure of Omega0 inside Omega union Gamma; Omega0 must touch Gamma
    touches = False
    for ax, ((lo0, hi0), (lo, hi)) in enumerate(zip(omega0, spec.omega)):
        if not lo <= lo0 < hi0 <= hi:
            raise GeometryError(f"Omega0 not inside Omega along axis {ax}")
        for side, hit in (("lo", lo0 == lo), ("hi", hi0 == hi)):
            if hit:
                if (ax, side) not in gamma:
                    raise GeometryError("closure of Omega0 meets the boundary outside Gamma")
                touches = True
    if not touches:
        raise GeometryError("Omega0 must share a boundary piece with Gamma")

    norm_d = float(base.sup_norm)
    if not (np.isfinite(norm_d) and norm_d > 0):
        raise GeometryError("weight base needs a finite positive sup norm")

    if center is None:
        center = (spec.t_max / 2, spec.a_max / 2, 0.5 * (spec.tau_min + spec.tau_max))
    center = tuple(float(c) for c in center)
    margin = math.sqrt(2.0) * eps
    for (lo, hi), c, lab in zip(
        ((0.0, spec.t_max), (0.0, spec.a_max), (spec.tau_min, spec.tau_max)), center, "tap"
    ):
        if not lo + margin - 1e-12 <= c <= hi - margin + 1e-12:
            raise GeometryError(
                f"center coordinate {lab}={c:g} violates the sqrt(2)*eps margin (eps={eps:g})"
            )

    rng = np.random.default_rng(seed)
    dmin = _min_d_on(base, omega0, samples, rng)
    if dmin <= 0:
        raise GeometryError("d must be positive on the closure of Omega0")
    if N is None:
        N = max(2, int(math.floor(4.0 * norm_d / dmin)) + 1)
        N *= 2
    elif not N > 1:
        raise GeometryError("N must be > 1")
    if not dmin > 4.0 * norm_d / N:
        raise GeometryError(
            f"N too small for Omega0: min d = {dmin:.6g} <= 4||d||/N = {4 * norm_d / N:.6g}"
        )

    beta_w = 0.75 * norm_d / eps**2  # midpoint of ||d||/2 < beta_w eps^2 < ||d||
    beps2 = beta_w * eps**2
    assert 2 * beps2 > norm_d > beps2
    mu = mu_levels(lam, norm_d, beps2, N)

    notes = []
    if n == 1:
        notes.append("Gamma is a single point; strict inclusion of the Omega0 contact set "
                     "in Gamma cannot hold in one dimension and is not checked")
    return UCGeometry(name, base, spec, tuple(tuple(map(float, b)) for b in omega0), gamma,
                      float(eps), int(N), float(lam), beta_w, center, mu, norm_d, tuple(notes))


# -- presets ----------------------------------------------------------------------------

def _unit_interval(eps: float, lam: float, N=None, center=None) -> UCGeometry:
    # Omega = (0, 1), Gamma = {1}; Omega1 = (0, 1.3) with the critical point outside Omega
    return build_uc_geometry(
        weight_catalog("extended-interval"), DomainSpec(omega=((0.0, 1.0),)),
        omega0=((0.8, 1.0),), gamma=((0, "hi"),), eps=eps, N=N, lam=lam, center=center,
        name="unit-interval",
    )


def _unit_ball(eps: float, lam: float, N=None, center=None) -> UCGeometry:
    # Omega1 = (-1, 1) with d = 1 - x^2; Omega = (-1, -0.2) keeps the critical point 0 outside
    return build_uc_geometry(
        weight_catalog("unit-ball"), DomainSpec(omega=((-1.0, -0.2),)),
        omega0=((-0.5, -0.2),), gamma=((0, "hi"),), eps=eps, N=N, lam=lam, center=center,
        name="unit-ball",
    )


GEOMETRIES = {"unit-interval": _unit_interval, "unit-ball": _unit_ball}


def geometry_preset(name: str, eps: float = 0.35, lam: float = 1.0, N: int | None = None,
                    center=None) -> UCGeometry:
    try:
        factory = GEOMETRIES[name]
    except KeyError:
        raise GeometryError(
            f"unsupported geometry {name!r} (known: {', '.join(GEOMETRIES)})"
        ) from None
    return factory(eps, lam, N, center)


# -- inclusion checks -----------------------------------------------------------------

@dataclass
class InclusionReport:
    geometry: str
    mu_ordered: bool
    inner_samples: int = 0
    inner_pass: int = 0
    outer_samples: int = 0
    outer_pass: int = 0
    boundary_nodes: int = 0
    boundary_gamma: int = 0
    boundary_level: int = 0
    counterexamples: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.mu_ordered and not self.counterexamples

    def row(self) -> dict:
        return {
            "geometry": self.geometry,
            "mu_ordered": int(self.mu_ordered),
            "inner_samples": self.inner_samples,
            "inner_pass": self.inner_pass,
            "outer_samples": self.outer_samples,
            "outer_pass": self.outer_pass,
            "boundary_nodes": self.boundary_nodes,
            "boundary_gamma": self.boundary_gamma,
            "boundary_level": self.boundary_level,
            "counterexamples": len(self.counterexamples),
        }


def verify_inclusions(geo: UCGeometry, sample_count: int = 10_000, seed: int = 0,
                      grid: Grid | None = None) -> InclusionReport:
    """Sample both inclusions around ``D`` and classify the nodes where ``D`` ends.

    Inner: points of ``Omega0 x B(p, eps/sqrt(N))`` must have ``phi > mu_4``.
    Outer: points of ``D`` must lie in ``B(p, sqrt(2) eps)``.
    Boundary (only when ``grid`` is given): every node of ``D`` with a
    neighbour outside ``D``, or on the edge of the grid, must lie within one
    cell of ``Gamma`` or have a neighbour with ``phi <= mu_1``.
    """
    mu = geo.mu
    rep = InclusionReport(geo.name, all(mu[k] < mu[k + 1] for k in range(3)))
    if sample_count > 0:
        rng = np.random.default_rng(seed)
        x = _sample_box(geo.omega0, sample_count, rng)
        tap = _sample_ball3(geo.center, geo.inner_radius, sample_count, rng)
        phi = geo.phi(*x, *tap)
        good = (phi > mu[3]) & geo.in_D(*x, *tap)
        rep.inner_samples = sample_count
        rep.inner_pass = int(good.sum())
        for k in np.flatnonzero(~good)[:20]:
            rep.counterexamples.append(("inner", tuple(float(c[k]) for c in (*x, *tap))))

        box = list(geo.spec.omega) + [(0.0, geo.spec.t_max), (0.0, geo.spec.a_max),
                                      (geo.spec.tau_min, geo.spec.tau_max)]
        pts = _sample_box(box, sample_count, rng)
        inD = geo.in_D(*pts)
        off = geo.offset(*pts[geo.n:])
        bad = inD & ~(off < geo.outer_radius)
        rep.outer_samples = int(inD.sum())
        rep.outer_pass = int((inD & ~bad).sum())
        for k in np.flatnonzero(bad)[:20]:
            rep.counterexamples.append(("outer", tuple(float(c[k]) for c in pts)))

    if grid is not None:
        _check_boundary(geo, grid, rep)
    return rep


def _check_boundary(geo: UCGeometry, grid: Grid, rep: InclusionReport) -> None:
    mesh = grid.mesh()
    phi = np.broadcast_to(geo.phi(*mesh), grid.shape)
    inD = geo.D_mask(grid)
    flip = np.zeros(grid.shape, bool)
    low_neighbour = np.zeros(grid.shape, bool)
    for ax in range(grid.ndim):
        m = grid.shape[ax]
        for step in (1, -1):
            src = [slice(None)] * grid.ndim
            dst = [slice(None)] * grid.ndim
            if step == 1:
                dst[ax], src[ax] = slice(0, m - 1), slice(1, m)
            else:
                dst[ax], src[ax] = slice(1, m), slice(0, m - 1)
            flip[tuple(dst)] |= ~inD[tuple(src)]
            low_neighbour[tuple(dst)] |= phi[tuple(src)] <= geo.mu[0]
            edge = [slice(None)] * grid.ndim
            edge[ax] = m - 1 if step == 1 else 0
            flip[tuple(edge)] = True
    boundary = inD & flip
    xs = [np.broadcast_to(mesh[k], grid.shape) for k in range(grid.n)]
    near_gamma = geo.gamma_distance(*xs) <= max(grid.hx) * (1 + 1e-9)
    rep.boundary_nodes = int(boundary.sum())
    rep.boundary_gamma = int((boundary & near_gamma).sum())
    rep.boundary_level = int((boundary & ~near_gamma & low_neighbour).sum())
    bad = boundary & ~near_gamma & ~low_neighbour
    for idx in list(zip(*np.nonzero(bad)))[:20]:
        coords = tuple(float(grid.axes[k][i]) for k, i in enumerate(idx))
        rep.counterexamples.append(("boundary", coords))


# -- cut-off ------------------------------------------------------------------------

def smoothstep5(z):
    """Quintic smoothstep and its first two derivatives, clamped to [0, 1]."""
    z = np.clip(z, 0.0, 1.0)
    s = z**3 * (10 - 15 * z + 6 * z**2)
    s1 = 30 * z**2 * (1 - z) ** 2
    s2 = 60 * z * (1 - z) * (1 - 2 * z)
    return s, s1, s2


@dataclass(frozen=True)
class CutoffPieces:
    chi: np.ndarray
    grad_x: list  # d chi / d x_k
    hess_x: list  # d2 chi / d x_i d x_j
    L0_tilde: np.ndarray  # (d_t + d_a + g d_tau) chi


def cutoff_chi(geo: UCGeometry, grid: Grid) -> Field:
    """``chi = S((phi - mu_2) / (mu_3 - mu_2))`` on the grid."""
    return Field(grid, cutoff_pieces(geo, grid).chi, "chi")


def cutoff_at(geo: UCGeometry, *point) -> np.ndarray:
    mu2, mu3 = geo.mu[1], geo.mu[2]
    return smoothstep5((geo.phi(*point) - mu2) / (mu3 - mu2))[0]


def cutoff_pieces(geo: UCGeometry, grid: Grid, coeffs: CoefficientSet | None = None) -> CutoffPieces:
    """``chi`` with analytic spatial gradient, Hessian and transport derivative."""
    n = grid.n
    mesh = grid.mesh()
    W = geo.weight()
    lam = geo.lam
    mu2, mu3 = geo.mu[1], geo.mu[2]
    dm = mu3 - mu2
    phi = np.broadcast_to(W.phi(*mesh), grid.shape)
    S, S1, S2 = smoothstep5((phi - mu2) / dm)
    xs = mesh[:n]
    gd = [np.broadcast_to(gk, grid.shape) for gk in geo.base.grad(*xs)]
    hd = geo.base.hess(*xs)
    dphi = [lam * phi * gk for gk in gd]
    grad = [S1 / dm * dp for dp in dphi]
    hess = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            d2phi = lam * phi * (lam * gd[i] * gd[j] + np.broadcast_to(hd[i][j], grid.shape))
            hess[i][j] = S2 / dm**2 * dphi[i] * dphi[j] + S1 / dm * d2phi
    g = 1.0 if coeffs is None else coeffs.growth_values(mesh[n + 2])
    l0psi = W.L0_tilde_psi(*mesh[n:], g)
    L0chi = np.broadcast_to(S1 / dm * lam * phi * l0psi, grid.shape)
    return CutoffPieces(np.array(S), grad, hess, L0chi)


# -- norms --------------------------------------------------------------------------

def h10_norm(u: Field, mask: np.ndarray | None = None) -> float:
    """``(||grad_x u||^2 + ||u||^2)^(1/2)`` over the masked nodes."""
    grid = u.grid
    grad, _ = spatial_derivatives(u.values, grid, boundary="one-sided")
    dens = u.values**2 + sum(gk**2 for gk in grad)
    if mask is not None:
        dens = np.where(mask, dens, 0.0)
    return math.sqrt(max(grid.integrate(dens), 0.0))
