import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from carleman_lab.domain import DomainSpec, Field, build_grid
from carleman_lab.geometry import (
    GEOMETRIES, GeometryError, build_uc_geometry, cutoff_at, cutoff_chi, cutoff_pieces,
    geometry_preset, h10_norm, in_ball, mu_levels, smoothstep5, verify_inclusions,
)
from carleman_lab.weights import weight_catalog

# 50-digit evaluation, tests/oracles/oracle_values.py
MU_EXAMPLE = (1.161834242728283, 1.4918246976412703, 1.915540829013896, 2.45960311115695)


def test_mu_example():
    mu = mu_levels(1.0, 1.0, 0.4, 4)
    assert mu == pytest.approx(MU_EXAMPLE, rel=1e-15)
    assert mu[0] == pytest.approx(math.exp(0.15)) and mu[3] == pytest.approx(math.exp(0.9))


@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(0.0, 10), st.integers(2, 200))
def test_mu_strictly_ordered(lam, norm_d, be2, N):
    mu = mu_levels(lam, norm_d, be2, N)
    if all(math.isfinite(m) for m in mu):
        assert mu[0] < mu[1] < mu[2] < mu[3]


@pytest.mark.parametrize("name", sorted(GEOMETRIES))
def test_beta_inside_admissible_band(name):
    geo = geometry_preset(name)
    be2 = geo.beta_w * geo.eps**2
    assert geo.norm_d / 2 < be2 < geo.norm_d
    assert be2 == pytest.approx(0.75 * geo.norm_d)


def test_band_arithmetic_example():
    norm_d, be2 = 1.0, 0.6
    assert norm_d > be2 and 2 * be2 > norm_d


@pytest.mark.parametrize("name", sorted(GEOMETRIES))
def test_center_of_observation_lies_in_D(name):
    geo = geometry_preset(name)
    (lo, hi), = geo.omega0
    xs = np.linspace(lo, hi, 50)[1:-1]
    assert np.all(geo.phi(xs, *geo.center) > geo.mu[3])
    assert np.all(geo.in_D(xs, *geo.center))


@pytest.mark.parametrize("name", sorted(GEOMETRIES))
def test_far_offsets_leave_D(name):
    geo = geometry_preset(name)
    (lo, hi), = geo.spec.omega
    r = geo.outer_radius * 1.0001 / math.sqrt(3)
    t, a, tau = (c + r for c in geo.center)
    xs = np.linspace(lo, hi, 101)
    assert not np.any(geo.in_D(xs, t, a, tau))


def test_zero_samples_is_empty_success():
    rep = verify_inclusions(geometry_preset("unit-interval"), sample_count=0)
    assert rep.ok and rep.inner_samples == 0 and rep.outer_samples == 0


@pytest.mark.parametrize("name", sorted(GEOMETRIES))
def test_inclusions_hold(name):
    geo = geometry_preset(name)
    grid = build_grid(geo.spec, [33, 17, 17, 17])
    rep = verify_inclusions(geo, 2000, seed=1, grid=grid)
    assert rep.ok, rep.counterexamples[:3]
    assert rep.inner_pass == rep.inner_samples == 2000
    assert rep.boundary_nodes == rep.boundary_gamma + rep.boundary_level


def test_N_too_small():
    with pytest.raises(GeometryError, match="N too small"):
        geometry_preset("unit-interval", N=3)


def test_auto_N_is_doubled_minimum():
    geo = geometry_preset("unit-ball")
    # d = 1 - x^2 on [-0.5, -0.2] has minimum 0.75; smallest N with 0.75 > 4/N is 6
    assert geo.N == 12


def test_center_margin_enforced():
    with pytest.raises(GeometryError, match="margin"):
        geometry_preset("unit-interval", center=(0.3, 0.5, 0.5))


def test_omega0_must_touch_gamma():
    with pytest.raises(GeometryError, match="share a boundary"):
        build_uc_geometry(weight_catalog("extended-interval"), DomainSpec(), ((0.4, 0.6),),
                          ((0, "hi"),), 0.35)
    with pytest.raises(GeometryError, match="outside Gamma"):
        build_uc_geometry(weight_catalog("extended-interval"), DomainSpec(), ((0.0, 0.2),),
                          ((0, "hi"),), 0.35)


def test_one_dimensional_note_recorded():
    assert any("one dimension" in n for n in geometry_preset("unit-interval").notes)


def test_unknown_geometry():
    with pytest.raises(GeometryError, match="unsupported geometry"):
        geometry_preset("annulus")


def test_in_ball_is_open():
    assert bool(in_ball((0.0, 0.0, 0.5), (0.0, 0.0, 0.0), 0.6))
    assert not bool(in_ball((0.0, 0.0, 0.6), (0.0, 0.0, 0.0), 0.6))


def _point_with_phi(geo, target):
    """(x, t, a, tau) on the center line x = x* with phi = target."""
    from scipy.optimize import brentq

    (lo, hi), = geo.spec.omega
    x = hi
    p_max = float(geo.phi(x, *geo.center))
    lam = geo.lam
    # psi = d(x) - beta r^2 = log(target) / lam
    r2 = (float(geo.base.value(np.array(x))) - math.log(target) / lam) / geo.beta_w
    assert r2 >= 0 and target <= p_max
    t0, a0, tau0 = geo.center
    return (x, t0 + math.sqrt(r2), a0, tau0)


def test_cutoff_examples():
    geo = geometry_preset("unit-interval")
    mu1, mu2, mu3, mu4 = geo.mu
    assert float(cutoff_at(geo, *_point_with_phi(geo, mu4))) == 1.0
    assert float(cutoff_at(geo, *_point_with_phi(geo, mu1))) == 0.0
    mid = float(cutoff_at(geo, *_point_with_phi(geo, 0.5 * (mu2 + mu3))))
    assert mid == pytest.approx(0.5, abs=1e-9)


@given(st.floats(-0.5, 1.5), st.floats(-0.5, 1.5))
def test_smoothstep_monotone_and_bounded(z1, z2):
    lo, hi = sorted((z1, z2))
    s_lo, s_hi = smoothstep5(np.array([lo, hi]))[0]
    assert 0.0 <= s_lo <= s_hi <= 1.0


def test_cutoff_gradient_support_and_derivatives():
    geo = geometry_preset("unit-interval")
    grid = build_grid(geo.spec, [129, 9, 9, 9])
    cp = cutoff_pieces(geo, grid)
    phi = np.broadcast_to(geo.phi(*grid.mesh()), grid.shape)
    nz = cp.grad_x[0] != 0
    assert np.all((phi[nz] >= geo.mu[1]) & (phi[nz] <= geo.mu[2]))
    assert np.all(cp.hess_x[0][0][(phi < geo.mu[1]) | (phi > geo.mu[2])] == 0)
    chi = cutoff_chi(geo, grid).values
    assert np.all((chi >= 0) & (chi <= 1))
    # analytic x-derivatives against fine central differences of chi
    mesh = [np.broadcast_to(m, grid.shape) for m in grid.mesh()]
    x, rest = mesh[0], mesh[1:]
    h = 1e-6
    d1 = (cutoff_at(geo, x + h, *rest) - cutoff_at(geo, x - h, *rest)) / (2 * h)
    scale = np.max(np.abs(cp.grad_x[0]))
    assert np.max(np.abs(d1 - cp.grad_x[0])) < 1e-5 * scale
    h = 1e-4
    d2 = (cutoff_at(geo, x + h, *rest) - 2 * cutoff_at(geo, x, *rest)
          + cutoff_at(geo, x - h, *rest)) / h**2
    assert np.max(np.abs(d2 - cp.hess_x[0][0])) < 5e-3 * np.max(np.abs(cp.hess_x[0][0]))


def test_h10_norm_of_linear_function():
    grid = build_grid(DomainSpec(), [9, 5, 5, 5])
    u = Field.from_function(grid, lambda x, t, a, tau: 2 * x + 0 * t)
    # int (4 + 4 x^2) over the unit box = 4 + 4/3, trapezoid on x^2 adds h^2/6
    exact = 4 + 4 * (1 / 3 + (1 / 8) ** 2 / 6)
    assert h10_norm(u) == pytest.approx(math.sqrt(exact), rel=1e-12)
    assert h10_norm(u, np.zeros(grid.shape, bool)) == 0.0


@pytest.mark.parametrize("name", sorted(GEOMETRIES))
def test_weight_invariants_on_grid_nodes(name):
    geo = geometry_preset(name)
    grid = build_grid(geo.spec, [65, 3, 3, 3])
    x = grid.x[0]
    inner = geo.base.in_omega1(x)
    assert np.all(geo.base.value(x[inner]) > 0)
    assert np.all(geo.base.grad_norm(x[~geo.base.in_exceptional(x)]) > 0)
