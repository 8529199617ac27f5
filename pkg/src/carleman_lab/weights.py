"""Spatial weight bases ``d(x)`` with analytic gradient and Hessian.

A weight base is positive on its domain of validity ``omega1``, vanishes on
its boundary and has a non-vanishing gradient away from the exceptional set
``omega``.  Catalog entries:

``unit-ball``        ``d = 1 - |x|^2`` on the unit ball, critical point at 0.
``unit-interval``    ``d = sin(pi x)`` on (0, 1), critical point at 1/2.
``extended-interval``
                     (0, 1) extended to (0, 1.3) past x = 1, critical point
                     moved to 1.15 so that ``|d'| > 0`` on [0, 1].

Interval weights are ``sin(pi theta(x))`` with an exponential reparametrization
``theta`` placing ``theta = 1/2`` at the requested critical point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import brentq


class WeightError(ValueError):
    pass


@dataclass(frozen=True)
class WeightBase:
    name: str
    n: int
    value: Callable
    grad: Callable
    hess: Callable
    omega1: tuple[tuple[float, float], ...]
    omega1_shape: str
    exceptional: tuple[tuple[float, float], ...]
    sup_norm: float

    def in_omega1(self, *x) -> np.ndarray:
        if self.omega1_shape == "ball":
            r2 = sum(xi**2 for xi in x)
            return r2 < 1.0
        inside = True
        for xi, (lo, hi) in zip(x, self.omega1):
            inside = inside & (xi > lo) & (xi < hi)
        return np.asarray(inside)

    def in_exceptional(self, *x) -> np.ndarray:
        inside = True
        for xi, (lo, hi) in zip(x, self.exceptional):
            inside = inside & (xi > lo) & (xi < hi)
        return np.asarray(inside)

    def grad_norm(self, *x) -> np.ndarray:
        return np.sqrt(sum(np.asarray(gk) ** 2 for gk in self.grad(*x)))

    def check_invariants(self, samples: int = 2000, seed: int = 0) -> None:
        """Sample d > 0 inside, d = 0 on the boundary, |grad d| > 0 off omega."""
        rng = np.random.default_rng(seed)
        pts = _sample_omega1(self, samples, rng)
        d = self.value(*pts)
        if np.any(d <= 0):
            raise WeightError(f"{self.name}: d <= 0 inside omega1")
        off = ~self.in_exceptional(*pts)
        if np.any(self.grad_norm(*[p[off] for p in pts]) <= 0):
            raise WeightError(f"{self.name}: grad d vanishes outside omega")
        bd = _sample_boundary(self, samples, rng)
        if np.max(np.abs(self.value(*bd))) > 1e-12:
            raise WeightError(f"{self.name}: d does not vanish on the boundary")


def _sample_omega1(base: WeightBase, m: int, rng) -> list[np.ndarray]:
    if base.omega1_shape == "ball":
        v = rng.normal(size=(base.n, m))
        v /= np.linalg.norm(v, axis=0)
        r = rng.uniform(0, 1, m) ** (1.0 / base.n) * (1 - 1e-9)
        return [v[k] * r for k in range(base.n)]
    return [rng.uniform(lo, hi, m) for lo, hi in base.omega1]


def _sample_boundary(base: WeightBase, m: int, rng) -> list[np.ndarray]:
    if base.omega1_shape == "ball":
        v = rng.normal(size=(base.n, m))
        v /= np.linalg.norm(v, axis=0)
        return [v[k] for k in range(base.n)]
    (lo, hi), = base.omega1
    return [np.array([lo, hi])]


def unit_ball(n: int = 1, omega_radius: float = 0.1) -> WeightBase:
    def value(*x):
        return 1.0 - sum(xi**2 for xi in x)

    def grad(*x):
        return [-2.0 * xi for xi in x]

    def hess(*x):
        return [[-2.0 if i == j else 0.0 for j in range(n)] for i in range(n)]

    return WeightBase(
        name="unit-ball",
        n=n,
        value=value,
        grad=grad,
        hess=hess,
        omega1=((-1.0, 1.0),) * n,
        omega1_shape="ball",
        exceptional=((-omega_radius, omega_radius),) * n,
        sup_norm=1.0,
    )


def interval_weight(lo: float, hi: float, critical: float, omega_halfwidth: float = 0.1,
                    name: str | None = None) -> WeightBase:
    """``sin(pi theta(x))`` on ``(lo, hi)`` with its maximum at ``critical``."""
    if not lo < critical < hi:
        raise WeightError("critical point must lie inside the interval")
    length = hi - lo
    frac = (critical - lo) / length
    if abs(frac - 0.5) < 1e-14:
        kappa = 0.0
    else:
        f = lambda k: np.expm1(k * frac * length) / np.expm1(k * length) - 0.5
        bracket = (1e-9, 200.0) if frac > 0.5 else (-200.0, -1e-9)
        kappa = brentq(f, *bracket, xtol=1e-15, rtol=1e-15)

    if kappa == 0.0:
        def theta(x):
            return (x - lo) / length, np.full_like(np.asarray(x, dtype=float), 1.0 / length), 0.0 * x
    else:
        denom = np.expm1(kappa * length)

        def theta(x):
            e = np.exp(kappa * (x - lo))
            return np.expm1(kappa * (x - lo)) / denom, kappa * e / denom, kappa**2 * e / denom

    def value(x):
        th, _, _ = theta(x)
        return np.sin(np.pi * th)

    def grad(x):
        th, d1, _ = theta(x)
        return [np.pi * np.cos(np.pi * th) * d1]

    def hess(x):
        th, d1, d2 = theta(x)
        return [[-np.pi**2 * np.sin(np.pi * th) * d1**2 + np.pi * np.cos(np.pi * th) * d2]]

    return WeightBase(
        name=name or f"interval({lo:g},{hi:g};{critical:g})",
        n=1,
        value=value,
        grad=grad,
        hess=hess,
        omega1=((lo, hi),),
        omega1_shape="box",
        exceptional=((critical - omega_halfwidth, critical + omega_halfwidth),),
        sup_norm=1.0,
    )


def affine(slope: float | tuple[float, ...], offset: float = 0.0) -> WeightBase:
    """``d(x) = slope . x + offset``; gradient never vanishes (Carleman tests)."""
    slopes = tuple(np.atleast_1d(slope).astype(float))
    n = len(slopes)
    if not any(slopes):
        raise WeightError("affine weight needs a non-zero slope")

    def value(*x):
        return offset + sum(s * xi for s, xi in zip(slopes, x))

    def grad(*x):
        return [s + 0.0 * x[0] for s in slopes]

    def hess(*x):
        return [[0.0] * n for _ in range(n)]

    return WeightBase(
        name=f"affine{slopes}+{offset:g}",
        n=n,
        value=value,
        grad=grad,
        hess=hess,
        omega1=((-np.inf, np.inf),) * n,
        omega1_shape="box",
        exceptional=((np.nan, np.nan),) * n,
        sup_norm=np.inf,
    )


CATALOG = {
    "unit-ball": lambda: unit_ball(1),
    "unit-interval": lambda: interval_weight(0.0, 1.0, 0.5, name="unit-interval"),
    "extended-interval": lambda: interval_weight(
        0.0, 1.3, 1.15, omega_halfwidth=0.1, name="extended-interval"
    ),
}


def weight_catalog(kind: str) -> WeightBase:
    try:
        base = CATALOG[kind]()
    except KeyError:
        raise WeightError(f"unsupported geometry {kind!r} (known: {', '.join(CATALOG)})") from None
    base.check_invariants()
    return base
