import math

import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given
from hypothesis import strategies as st

from carleman_lab.carleman import (
    Bump, CarlemanWeight, SupportError, adjoint_check, apply_L, bump_pieces, carleman_lhs,
    carleman_rhs, carleman_terms, conjugated_apply, conjugated_terms, decompose_P, eval_weight, random_bumps,
    sigma_field, sweep_verify,
)
from carleman_lab.coefficients import constant, logistic_growth
from carleman_lab.domain import DomainSpec, Field, build_grid
from carleman_lab.operators import apply_L0_tilde, principal_part
from carleman_lab.weights import affine, unit_ball, weight_catalog

CENTER = (0.5, 0.5, 0.5)

# Gauss-Legendre quadrature of the closed-form integrands, 48 points per axis,
# from tests/oracles/oracle_values.py (agrees with 32 and 64 points to 1e-14)
REFERENCE_BUMP = Bump((0.5, 0.45, 0.55, 0.5), (0.3, 0.3, 0.3, 0.3), 1.3)
REFERENCE = {
    "lhs_transport": 2.25546594893558,
    "lhs_gradient": 4.0299640062352555,
    "lhs_zeroth": 0.06408707512048151,
    "rhs": 691.0734146151549,
}


def _weight(s=4.0, lam=1.0, base=None, beta=0.5):
    return CarlemanWeight(base or affine(4.0, -4.0), beta, lam, s, CENTER)


@pytest.fixture(scope="module")
def grid():
    return build_grid(DomainSpec(), [33, 17, 17, 17])


@pytest.fixture(scope="module")
def bump(grid):
    return Bump((0.5, 0.5, 0.45, 0.55), (0.3, 0.3, 0.3, 0.3), 1.0).sample(grid)


def test_weight_at_center_reduces_to_base():
    w = _weight(lam=2.0, base=unit_ball())
    psi, phi = eval_weight(w, (0.3, *CENTER))
    assert psi == pytest.approx(0.91)
    assert phi == pytest.approx(math.exp(1.82))


def test_weight_zero_exponent_gives_one():
    w = CarlemanWeight(unit_ball(), 1.0, 3.0, 1.0, (0.0, 0.0, 0.0))
    # d(0) = 1, offsets squared sum to 1
    psi, phi = eval_weight(w, (0.0, 1 / math.sqrt(3), 1 / math.sqrt(3), 1 / math.sqrt(3)))
    assert psi == pytest.approx(0.0, abs=1e-15)
    assert phi == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("kw", [{"lam": 0.0}, {"s": -1.0}, {"beta_w": 0.0}])
def test_weight_parameters_validated(kw):
    args = {"base": affine(1.0), "beta_w": 1.0, "lam": 1.0, "s": 1.0, "center": CENTER, **kw}
    with pytest.raises(ValueError):
        CarlemanWeight(**args)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_phi_positive_and_maximal_at_center(x, t, a, tau):
    w = _weight(lam=2.0, base=weight_catalog("unit-interval"))
    _, phi = eval_weight(w, (x, t, a, tau))
    _, phi_c = eval_weight(w, (x, *CENTER))
    assert 0 < phi <= phi_c


def test_sigma_examples():
    g = build_grid(DomainSpec(omega=((-1.0, 1.0),)), [9, 3, 3, 3])
    sig, smin = sigma_field(constant(), _weight(base=unit_ball()), g)
    assert np.allclose(sig, 4 * g.x[0] ** 2)
    assert smin == pytest.approx(0.0)
    sig, smin = sigma_field(constant(), _weight(base=affine(1.0)), g)
    assert np.allclose(sig, 1.0) and smin == 1.0
    g2 = build_grid(DomainSpec(omega=((0, 1), (0, 1))), [3, 3, 3, 3, 3])
    c2 = replace(constant(2), diffusion=lambda *x: [[2.0 + 0 * x[0], 1.0], [1.0, 2.0]])
    sig, _ = sigma_field(c2, _weight(base=affine((1.0, 0.0))), g2)
    assert np.allclose(sig, 2.0)


def test_zero_s_conjugation_is_L(bump):
    c = logistic_growth()
    direct, expanded = conjugated_apply(bump, _weight(s=0.0), c)
    L = apply_L(bump.values, bump.grid, c)
    assert np.allclose(direct.values, L, rtol=0, atol=1e-12 * np.max(np.abs(L)))
    assert np.allclose(expanded.values, L, rtol=0, atol=1e-12 * np.max(np.abs(L)))
    P1, P2, _ = decompose_P(bump, _weight(s=0.0), c)
    A = c.diffusion_matrix(np.meshgrid(*bump.grid.x, indexing="ij"))
    assert np.array_equal(P1.values, -principal_part(bump.values, bump.grid, A))
    assert np.array_equal(P2.values, apply_L0_tilde(bump, c).values)


def test_zero_field_decomposes_to_zero(grid):
    P1, P2, _ = decompose_P(Field.zeros(grid), _weight(), logistic_growth())
    assert not np.any(P1.values) and not np.any(P2.values)


@pytest.mark.parametrize("s, lam", [(4.0, 2.0), (16.0, 1.0), (64.0, 4.0)])
def test_regrouping_is_exact(bump, s, lam):
    w = _weight(s=s, lam=lam, base=weight_catalog("unit-interval"))
    c = logistic_growth()
    expanded = conjugated_terms(bump, w, c).expanded()
    P1, P2, _ = decompose_P(bump, w, c)
    scale = np.max(np.abs(expanded))
    assert np.max(np.abs(P1.values + P2.values - expanded)) <= 1e-12 * scale


def test_direct_route_refuses_underflow(bump):
    w = _weight(s=64.0, lam=4.0, base=weight_catalog("unit-interval"))
    with pytest.raises(ValueError, match="floating-point range"):
        conjugated_apply(bump, w, logistic_growth())


def test_a1_factor_independent_of_s(bump):
    c = logistic_growth()
    base = weight_catalog("unit-interval")
    factors = [decompose_P(bump, _weight(s=s, lam=2.0, base=base), c)[2] for s in (4, 16, 64)]
    assert np.array_equal(factors[0], factors[1]) and np.array_equal(factors[1], factors[2])
    assert np.all(np.isfinite(factors[0]))


def test_support_violation(grid):
    wide = Bump((0.5, 0.5, 0.5, 0.5), (0.6, 0.3, 0.3, 0.3)).sample(grid)
    with pytest.raises(SupportError, match="compactly supported"):
        conjugated_apply(wide, _weight(), logistic_growth())
    with pytest.raises(SupportError):
        carleman_lhs(wide, _weight(), logistic_growth())


def test_zero_function_integrals(grid):
    z = Field.zeros(grid)
    assert carleman_lhs(z, _weight(), logistic_growth()) == (0.0, 0.0, 0.0)
    assert carleman_rhs(z, _weight(), logistic_growth()) == 0.0
    rep = carleman_terms(bump_pieces(z, logistic_growth()), _weight())
    assert math.isnan(rep.ratio)


def test_doubling_quadruples_every_integral(bump):
    c, w = logistic_growth(), _weight(s=16.0, lam=2.0)
    one = (*carleman_lhs(bump, w, c), carleman_rhs(bump, w, c))
    two = (*carleman_lhs(2 * bump, w, c), carleman_rhs(2 * bump, w, c))
    for a, b in zip(one, two):
        assert b == pytest.approx(4 * a, rel=1e-12)


@given(st.floats(0.1, 10.0), st.sampled_from([4.0, 32.0]), st.sampled_from([1.0, 4.0]))
def test_homogeneity_and_positivity(alpha, s, lam):
    g = build_grid(DomainSpec(), [17, 9, 9, 9])
    u = Bump((0.5, 0.5, 0.5, 0.5), (0.3, 0.3, 0.3, 0.3)).sample(g)
    c, w = logistic_growth(), _weight(s=s, lam=lam)
    base = carleman_terms(bump_pieces(u, c), w)
    scaled = carleman_terms(bump_pieces(alpha * u, c), w)
    for name in ("lhs_transport", "lhs_gradient", "lhs_zeroth", "rhs"):
        assert getattr(base, name) >= 0
        assert getattr(scaled, name) == pytest.approx(alpha**2 * getattr(base, name), rel=1e-10)


def test_reference_bump_against_quadrature_oracle():
    c = logistic_growth()
    w = CarlemanWeight(affine(4.0, -4.0), 0.5, 1.0, 8.0, CENTER)
    errs = []
    for res in ([33, 17, 17, 17], [65, 33, 33, 33]):
        u = REFERENCE_BUMP.sample(build_grid(DomainSpec(), res))
        got = dict(zip(("lhs_transport", "lhs_gradient", "lhs_zeroth"), carleman_lhs(u, w, c)))
        got["rhs"] = carleman_rhs(u, w, c)
        errs.append({k: abs(got[k] - v) / v for k, v in REFERENCE.items()})
    fine = errs[1]
    assert fine["lhs_zeroth"] < 1e-5
    assert fine["lhs_gradient"] < 0.01 and fine["rhs"] < 0.02
    assert fine["lhs_transport"] < 0.06
    # second-order quadrature and stencils: every error drops by more than 3
    for k in REFERENCE:
        assert fine[k] < errs[0][k] / 3


def test_sweep_flags_degenerate_function(grid, bump):
    res = sweep_verify([Field.zeros(grid), bump], [4, 8], [1.0], _weight(), logistic_growth())
    statuses = {r.bump_id: r.status for r in res.reports}
    assert statuses == {0: "degenerate test function", 1: "ok"}
    assert list(res.growth) == [(1, 1.0)]


def test_single_bump_ratio_bounded_over_s_doubling(bump):
    s_values = [4.0, 8.0, 16.0, 32.0, 64.0]
    res = sweep_verify([bump], s_values, [1.0, 2.0], _weight(), logistic_growth())
    for lam in (1.0, 2.0):
        ratios = [r.ratio for r in res.reports if r.lam == lam]
        assert all(math.isfinite(r) and r > 0 for r in ratios)
        growth = [b / a for a, b in zip(ratios, ratios[1:])]
        assert max(growth) <= 1.5
    assert res.ok


def test_disjoint_bumps_ratio_reported(grid):
    u1 = Bump((0.3, 0.5, 0.5, 0.5), (0.12, 0.3, 0.3, 0.3)).sample(grid)
    u2 = Bump((0.7, 0.5, 0.5, 0.5), (0.12, 0.3, 0.3, 0.3)).sample(grid)
    res = sweep_verify([u1, u2, u1 + u2], [16.0, 32.0], [1.0], _weight(), logistic_growth())
    rows = res.rows()
    assert len(rows) == 6 and all(math.isfinite(r["ratio"]) for r in rows)


def test_sweep_is_deterministic_under_threads(monkeypatch, grid):
    bumps = [b.sample(grid) for b in random_bumps(DomainSpec(), 3, seed=5)]
    one = sweep_verify(bumps, [4, 8], [1.0, 2.0], _weight(), logistic_growth()).rows()
    monkeypatch.setenv("CARLEMAN_LAB_THREADS", "3")
    three = sweep_verify(bumps, [4, 8], [1.0, 2.0], _weight(), logistic_growth()).rows()
    assert one == three


def test_random_bumps_respect_margin():
    spec = DomainSpec()
    for b in random_bumps(spec, 50, seed=11, margin=0.1):
        for c, r in zip(b.center, b.radii):
            assert c - r >= 0.1 - 1e-12 and c + r <= 0.9 + 1e-12


def test_adjoint_trivial_cases(bump):
    z = Field.zeros(bump.grid)
    assert adjoint_check(z, bump, logistic_growth()) == 0.0
    assert adjoint_check(bump, z, logistic_growth()) == 0.0
    assert adjoint_check(bump, bump, constant()) < 1e-12


def test_adjoint_linear_growth_limit():
    c = replace(constant(), growth=lambda tau: tau + 0.0, growth_prime=lambda tau: 1.0 + 0 * tau)
    b = Bump((0.5, 0.5, 0.5, 0.5), (0.35, 0.35, 0.35, 0.35))
    gaps = []
    for m in (9, 17, 33):
        u = b.sample(build_grid(DomainSpec(), [9, m, m, m]))
        quad = u.grid.integrate(u.values * apply_L0_tilde(u, c).values)
        half = -0.5 * u.grid.integrate(u.values**2)
        gaps.append(abs(quad - half) / abs(half))
    assert gaps[2] < 0.03 and gaps[1] / gaps[2] > 3.0
