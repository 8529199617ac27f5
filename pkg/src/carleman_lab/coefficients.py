"""Model coefficients: diffusion matrix, drift, mortality, growth modulus and birth kernel.

Coefficients are plain callables evaluated on broadcastable coordinate arrays:

* ``diffusion(*x)`` returns an ``n x n`` nested sequence of arrays,
* ``drift(*x, t, a, tau)`` returns ``n`` arrays,
* ``reaction(*x, t, a, tau)``, ``growth(tau)``, ``growth_prime(tau)``,
* ``birth(*x, a, tau, tau_tilde)``.

Named presets live in :data:`PRESETS`; :func:`load_coefficient_csv` overrides
individual coefficients of a preset with tabulated data.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .domain import Grid


class CoefficientError(ValueError):
    pass


@dataclass(frozen=True)
class CoefficientSet:
    name: str
    n: int
    diffusion: Callable
    drift: Callable
    reaction: Callable
    growth: Callable
    growth_prime: Callable
    birth: Callable
    sigma1: float

    def __post_init__(self):
        if self.n not in (1, 2):
            raise CoefficientError(f"spatial dimension must be 1 or 2, got {self.n}")
        if not self.sigma1 > 0:
            raise CoefficientError("declared ellipticity constant sigma1 must be > 0")

    # -- evaluation on a grid -------------------------------------------------
    def diffusion_matrix(self, xs, shape=None) -> np.ndarray:
        """``A(x)`` as an array of shape ``(n, n, *shape)``."""
        entries = self.diffusion(*xs)
        if shape is None:
            shape = np.broadcast_shapes(*(np.shape(x) for x in xs))
        out = np.empty((self.n, self.n) + tuple(shape))
        for i in range(self.n):
            for j in range(self.n):
                out[i, j] = np.broadcast_to(entries[i][j], shape)
        return _finite(out, "diffusion")

    def drift_vector(self, mesh, shape) -> np.ndarray:
        entries = self.drift(*mesh)
        out = np.empty((self.n,) + tuple(shape))
        for k in range(self.n):
            out[k] = np.broadcast_to(entries[k], shape)
        return _finite(out, "drift")

    def reaction_field(self, mesh, shape) -> np.ndarray:
        return _finite(np.broadcast_to(self.reaction(*mesh), shape), "reaction")

    def growth_values(self, tau) -> np.ndarray:
        return _finite(np.asarray(self.growth(tau), dtype=float) + 0 * tau, "growth")

    def growth_prime_values(self, tau) -> np.ndarray:
        return _finite(np.asarray(self.growth_prime(tau), dtype=float) + 0 * tau, "growth_prime")

    def validate(self, grid: Grid) -> None:
        """Check symmetry, ellipticity and positivity of g at the grid nodes."""
        if grid.n != self.n:
            raise CoefficientError(f"coefficients are {self.n}-d but grid is {grid.n}-d")
        A = self.diffusion_matrix(np.meshgrid(*grid.x, indexing="ij"))
        if not np.allclose(A, np.swapaxes(A, 0, 1), rtol=0, atol=1e-14):
            raise CoefficientError("diffusion matrix is not symmetric")
        lam = _min_eigenvalue(A)
        if lam.min() < self.sigma1 - 1e-10:
            raise CoefficientError(
                f"ellipticity violated: min eigenvalue {lam.min():.6g} < sigma1={self.sigma1}"
            )
        g = self.growth_values(grid.tau)
        if np.any(g <= 0):
            raise CoefficientError("growth modulus g must be > 0 on [tau_min, tau_max]")


def _finite(arr, what):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise CoefficientError(f"coefficient {what} evaluated to non-finite values")
    return arr


def _min_eigenvalue(A: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    mats = np.moveaxis(A.reshape(n, n, -1), -1, 0)
    return np.linalg.eigvalsh(mats)[:, 0]


def check_ellipticity(coeffs: CoefficientSet, sample_count: int, box=None, seed: int = 0) -> float:
    """Smallest value of ``xi^T A(x) xi`` over unit ``xi`` at sampled ``x``.

    The minimum over unit vectors is taken exactly (smallest eigenvalue), the
    minimum over ``x`` by uniform sampling of ``box`` (default unit cube).
    """
    if sample_count < 1:
        raise CoefficientError("sample_count must be >= 1")
    box = box or ((0.0, 1.0),) * coeffs.n
    rng = np.random.default_rng(seed)
    xs = [rng.uniform(lo, hi, sample_count) for lo, hi in box]
    A = coeffs.diffusion_matrix(xs, (sample_count,))
    if not np.allclose(A, np.swapaxes(A, 0, 1), rtol=0, atol=1e-14):
        raise CoefficientError("diffusion matrix is not symmetric")
    est = float(_min_eigenvalue(A).min())
    if est <= 0:
        raise CoefficientError(f"non-elliptic data: min quadratic form {est:.6g} <= 0")
    if est < coeffs.sigma1 - 1e-10:
        raise CoefficientError(f"estimated sigma1={est:.6g} below declared {coeffs.sigma1}")
    return est


# -- presets --------------------------------------------------------------------

def _zero(*args):
    return 0.0


def _identity(n):
    def diffusion(*x):
        return [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]

    return diffusion


def _zero_drift(n):
    def drift(*args):
        return [0.0] * n

    return drift


def constant(n: int = 1) -> CoefficientSet:
    return CoefficientSet(
        name="constant",
        n=n,
        diffusion=_identity(n),
        drift=_zero_drift(n),
        reaction=_zero,
        growth=lambda tau: 1.0,
        growth_prime=lambda tau: 0.0,
        birth=_zero,
        sigma1=1.0,
    )


def pure_diffusion(n: int = 1) -> CoefficientSet:
    """Variable diffusion with constant growth modulus and no birth."""

    def diffusion(*x):
        s = 1.0 + 0.25 * np.sin(np.pi * x[0])
        if n == 1:
            return [[s]]
        return [[s, 0.0 * s], [0.0 * s, s]]

    return replace(constant(n), name="pure-diffusion", diffusion=diffusion,
                   reaction=lambda *m: 0.5, sigma1=1.0)


def logistic_growth(n: int = 1) -> CoefficientSet:
    """Variable diffusion, drift, mortality and a logistic-shaped growth modulus."""

    def diffusion(*x):
        s = 1.0 + 0.25 * np.sin(np.pi * x[0])
        if n == 1:
            return [[s]]
        off = 0.2 + 0.0 * s
        return [[s, off], [off, s + 0.1 * np.cos(np.pi * x[1])]]

    def drift(*m):
        x, (t, a, tau) = m[:n], m[n:]
        return [0.3 * np.cos(np.pi * x[k]) * (1.0 + 0.5 * a) for k in range(n)]

    def reaction(*m):
        t, a, tau = m[n:]
        return 0.2 + 0.1 * tau + 0.05 * t

    return CoefficientSet(
        name="logistic-growth",
        n=n,
        diffusion=diffusion,
        drift=drift,
        reaction=reaction,
        growth=lambda tau: 0.5 + tau * (1.0 - tau),
        growth_prime=lambda tau: 1.0 - 2.0 * tau,
        birth=_zero,
        sigma1=0.75 if n == 1 else 0.5,
    )


def separable_birth(n: int = 1) -> CoefficientSet:
    def birth(*m):
        a, tau, tau_t = m[n:]
        return 2.0 * a * tau_t * (1.0 - 0.5 * tau)

    return replace(
        constant(n),
        name="separable-birth",
        reaction=lambda *m: 0.5,
        growth=lambda tau: 1.0 + 0.5 * tau,
        growth_prime=lambda tau: 0.5,
        birth=birth,
    )


PRESETS: dict[str, Callable[[int], CoefficientSet]] = {
    "constant": constant,
    "pure-diffusion": pure_diffusion,
    "logistic-growth": logistic_growth,
    "separable-birth": separable_birth,
}


def get_preset(name: str, n: int = 1) -> CoefficientSet:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise CoefficientError(
            f"unknown coefficient preset {name!r} (known: {', '.join(sorted(PRESETS))})"
        ) from None
    return factory(n)


# -- tabulated data ---------------------------------------------------------------

_COORD_NAMES = ("x", "x1", "x2", "t", "a", "tau", "tau_tilde")
_VALUE_NAMES = ("a11", "a12", "a22", "b1", "b2", "c", "g", "g_prime", "beta")


def load_coefficient_csv(path: str | Path, base: str | CoefficientSet = "constant") -> CoefficientSet:
    """Override coefficients of ``base`` by tabulated values.

    The header names coordinate columns first (from ``x``/``x1``, ``x2``,
    ``t``, ``a``, ``tau``, ``tau_tilde``), then one or more value columns
    (``a11``, ``a12``, ``a22``, ``b1``, ``b2``, ``c``, ``g``, ``g_prime``,
    ``beta``).  Rows must cover a full tensor grid of the coordinates; values
    are interpolated multilinearly.  Overriding ``g`` requires ``g_prime``.
    """
    path = Path(path)
    coeffs = get_preset(base) if isinstance(base, str) else base
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise CoefficientError(f"{path}: no data rows")
    header = [h.strip() for h in rows[0]]
    coords = []
    for h in header:
        if h in _COORD_NAMES:
            coords.append(h)
        else:
            break
    values = header[len(coords):]
    if not coords or not values or any(v not in _VALUE_NAMES for v in values):
        raise CoefficientError(f"{path}: header must be coordinates then values, got {header}")
    data = np.array([[float(c) for c in r] for r in rows[1:] if r], dtype=float)
    axes = [np.unique(data[:, k]) for k in range(len(coords))]
    shape = tuple(len(ax) for ax in axes)
    if int(np.prod(shape)) != len(data):
        raise CoefficientError(f"{path}: rows do not form a full tensor grid")
    order = np.lexsort([data[:, k] for k in reversed(range(len(coords)))])
    data = data[order]
    interps = {}
    for j, name in enumerate(values):
        table = data[:, len(coords) + j].reshape(shape)
        interps[name] = RegularGridInterpolator(axes, table, bounds_error=False, fill_value=None)

    def lookup(name, available):
        interp = interps[name]

        def fn(*args):
            named = dict(zip(available, args))
            pts = [np.asarray(named[_canonical(c, coeffs.n)], dtype=float) for c in coords]
            bshape = np.broadcast_shapes(*(p.shape for p in pts))
            stacked = np.stack([np.broadcast_to(p, bshape) for p in pts], axis=-1)
            return interp(stacked.reshape(-1, len(coords))).reshape(bshape)

        return fn

    xnames = ["x1", "x2"][: coeffs.n]
    full = xnames + ["t", "a", "tau"]
    updates = {}
    if any(v in interps for v in ("a11", "a12", "a22")):
        base_diff = coeffs.diffusion

        def diffusion(*x, _base=base_diff):
            entries = [list(row) for row in _base(*x)]
            for name, (i, j) in (("a11", (0, 0)), ("a12", (0, 1)), ("a22", (1, 1))):
                if name in interps and i < coeffs.n and j < coeffs.n:
                    val = lookup(name, xnames)(*x)
                    entries[i][j] = val
                    entries[j][i] = val
            return entries

        updates["diffusion"] = diffusion
    if any(v in interps for v in ("b1", "b2")):
        base_drift = coeffs.drift

        def drift(*m, _base=base_drift):
            entries = list(_base(*m))
            for k, name in enumerate(("b1", "b2")[: coeffs.n]):
                if name in interps:
                    entries[k] = lookup(name, full)(*m)
            return entries

        updates["drift"] = drift
    if "c" in interps:
        updates["reaction"] = lookup("c", full)
    if "g" in interps:
        if "g_prime" not in interps:
            raise CoefficientError(f"{path}: tabulated g requires a g_prime column")
        updates["growth"] = lookup("g", ["tau"])
        updates["growth_prime"] = lookup("g_prime", ["tau"])
    if "beta" in interps:
        updates["birth"] = lookup("beta", xnames + ["a", "tau", "tau_tilde"])
    return replace(coeffs, name=f"{coeffs.name}+{path.name}", **updates)


def _canonical(coord: str, n: int) -> str:
    return "x1" if coord == "x" else coord
