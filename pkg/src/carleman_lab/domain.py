"""Computational domain, tensor grids and grid fields.

Every field lives on a uniform tensor grid over ``(x..., t, a, tau)``.  The
spatial axes come first (one or two of them), followed by time, age and size.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class GridError(ValueError):
    """Raised for inconsistent domain or grid parameters."""


@dataclass(frozen=True)
class DomainSpec:
    """Physical extents of the model domain.

    ``omega`` holds one ``(lo, hi)`` pair per spatial dimension.  With
    ``shape="ball"`` the spatial domain is the ball inscribed in that box; the
    grid still covers the whole box and :meth:`Grid.omega_mask` flags the
    nodes inside.
    """

    omega: tuple[tuple[float, float], ...] = ((0.0, 1.0),)
    t_max: float = 1.0
    a_max: float = 1.0
    tau_min: float = 0.0
    tau_max: float = 1.0
    shape: str = "box"

    def __post_init__(self):
        object.__setattr__(self, "omega", tuple((float(lo), float(hi)) for lo, hi in self.omega))
        if len(self.omega) not in (1, 2):
            raise GridError(f"spatial dimension must be 1 or 2, got {len(self.omega)}")
        for lo, hi in self.omega:
            if not hi > lo:
                raise GridError(f"non-positive spatial extent ({lo}, {hi})")
        if not self.t_max > 0:
            raise GridError("non-positive extent: t_max must be > 0")
        if not self.a_max > 0:
            raise GridError("non-positive extent: a_max must be > 0")
        if not self.tau_max > self.tau_min:
            raise GridError("empty size interval: tau_min must be < tau_max")
        if self.shape not in ("box", "ball"):
            raise GridError(f"unknown spatial shape {self.shape!r}")

    @property
    def spatial_dim(self) -> int:
        return len(self.omega)

    @property
    def extents(self) -> tuple[tuple[float, float], ...]:
        """``(lo, hi)`` for every grid axis, spatial axes first."""
        return self.omega + ((0.0, self.t_max), (0.0, self.a_max), (self.tau_min, self.tau_max))

    def to_dict(self) -> dict:
        return {
            "omega": [list(iv) for iv in self.omega],
            "t_max": self.t_max,
            "a_max": self.a_max,
            "tau_min": self.tau_min,
            "tau_max": self.tau_max,
            "shape": self.shape,
        }


@dataclass(frozen=True)
class Grid:
    spec: DomainSpec
    counts: tuple[int, ...]
    axes: tuple[np.ndarray, ...] = field(repr=False, compare=False)
    spacings: tuple[float, ...]

    @property
    def n(self) -> int:
        return self.spec.spatial_dim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def ndim(self) -> int:
        return len(self.counts)

    @property
    def t_axis(self) -> int:
        return self.n

    @property
    def a_axis(self) -> int:
        return self.n + 1

    @property
    def tau_axis(self) -> int:
        return self.n + 2

    @property
    def x(self) -> tuple[np.ndarray, ...]:
        return self.axes[: self.n]

    @property
    def t(self) -> np.ndarray:
        return self.axes[self.t_axis]

    @property
    def a(self) -> np.ndarray:
        return self.axes[self.a_axis]

    @property
    def tau(self) -> np.ndarray:
        return self.axes[self.tau_axis]

    @property
    def hx(self) -> tuple[float, ...]:
        return self.spacings[: self.n]

    @property
    def ht(self) -> float:
        return self.spacings[self.t_axis]

    @property
    def ha(self) -> float:
        return self.spacings[self.a_axis]

    @property
    def htau(self) -> float:
        return self.spacings[self.tau_axis]

    def coord(self, axis: int) -> np.ndarray:
        """Coordinates along ``axis`` shaped to broadcast against the grid."""
        shape = [1] * self.ndim
        shape[axis] = self.counts[axis]
        return self.axes[axis].reshape(shape)

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Broadcastable ``(x..., t, a, tau)`` coordinate arrays."""
        return tuple(self.coord(k) for k in range(self.ndim))

    def spatial_mesh(self) -> tuple[np.ndarray, ...]:
        return self.mesh()[: self.n]

    def omega_mask(self) -> np.ndarray:
        """Boolean mask over the spatial nodes lying in the closed domain."""
        xs = np.meshgrid(*self.x, indexing="ij")
        if self.spec.shape == "box":
            return np.ones(xs[0].shape, dtype=bool)
        centre = [0.5 * (lo + hi) for lo, hi in self.spec.omega]
        radius = 0.5 * min(hi - lo for lo, hi in self.spec.omega)
        r2 = sum((xi - ci) ** 2 for xi, ci in zip(xs, centre))
        return r2 <= radius**2 * (1 + 1e-12)

    def trapezoid_weights(self) -> np.ndarray:
        """Tensorized trapezoid weights, shape equal to the grid shape."""
        w = np.ones(self.shape)
        for k in range(self.ndim):
            w = w * _trapezoid_1d(self.counts[k], self.spacings[k]).reshape(
                [-1 if j == k else 1 for j in range(self.ndim)]
            )
        return w

    def axis_weights(self, axis: int) -> np.ndarray:
        return _trapezoid_1d(self.counts[axis], self.spacings[axis])

    def integrate(self, values: np.ndarray) -> float:
        """Trapezoid integral of a full-grid array."""
        out = np.asarray(values, dtype=float)
        for k in reversed(range(self.ndim)):
            out = np.tensordot(out, self.axis_weights(k), axes=([k], [0]))
        return float(out)

    def to_dict(self) -> dict:
        return {"spec": self.spec.to_dict(), "counts": list(self.counts), "spacings": list(self.spacings)}


def _trapezoid_1d(count: int, h: float) -> np.ndarray:
    w = np.full(count, h)
    w[0] = w[-1] = 0.5 * h
    return w


def build_grid(spec: DomainSpec, resolution: int | Sequence[int]) -> Grid:
    """Uniform tensor grid over the closed domain.

    ``resolution`` is either a single node count used on every axis or one
    count per axis ``(x..., t, a, tau)``.
    """
    nax = spec.spatial_dim + 3
    if np.isscalar(resolution):
        counts = (int(resolution),) * nax
    else:
        counts = tuple(int(c) for c in resolution)
    if len(counts) != nax:
        raise GridError(f"expected {nax} node counts, got {len(counts)}")
    if min(counts) < 3:
        raise GridError("node count < 3")
    axes = []
    spacings = []
    for (lo, hi), m in zip(spec.extents, counts):
        axes.append(np.linspace(lo, hi, m))
        spacings.append((hi - lo) / (m - 1))
    return Grid(spec, counts, tuple(axes), tuple(spacings))


@dataclass(frozen=True)
class Field:
    """Samples of a scalar function on a grid."""

    grid: Grid
    values: np.ndarray = field(repr=False)
    label: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise GridError(f"field shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise GridError(f"field {self.label or '<unnamed>'} has non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid, fn, label: str = "") -> "Field":
        vals = np.broadcast_to(fn(*grid.mesh()), grid.shape)
        return cls(grid, np.array(vals, dtype=float), label)

    @classmethod
    def zeros(cls, grid: Grid, label: str = "") -> "Field":
        return cls(grid, np.zeros(grid.shape), label)

    def with_values(self, values: np.ndarray, label: str | None = None) -> "Field":
        return Field(self.grid, values, self.label if label is None else label)

    def __add__(self, other: "Field") -> "Field":
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        return self.with_values(self.values - other.values)

    def __mul__(self, k: float) -> "Field":
        return self.with_values(self.values * k)

    __rmul__ = __mul__

    def integral(self) -> float:
        return self.grid.integrate(self.values)

    def l2(self) -> float:
        return float(np.sqrt(self.grid.integrate(self.values**2)))
