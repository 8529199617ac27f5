"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -s`` to see the lines inline; they are
also collected into an ``acceptance`` section of the terminal summary.
"""

import filecmp
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from carleman_lab.carleman import (
    CarlemanWeight, adjoint_check, conjugated_apply, decompose_P, random_bumps, sweep_verify,
)
from carleman_lab.cli import main
from carleman_lab.coefficients import constant, get_preset, logistic_growth
from carleman_lab.continuation import (
    decay_bound, decay_experiment, extract_cauchy, forward_truth, reconstruct,
)
from carleman_lab.domain import DomainSpec, build_grid
from carleman_lab.forward import ManufacturedProblem, convergence_study, solve_forward, ForwardProblem
from carleman_lab.geometry import GEOMETRIES, geometry_preset, verify_inclusions
from carleman_lab.weights import affine, weight_catalog

from conftest import fitted_order, record_acceptance

SPEC = DomainSpec()
CENTER = (0.5, 0.5, 0.5)


def _gate(number, title, ok, detail, t0, limit=None):
    seconds = time.perf_counter() - t0
    if limit is not None and seconds > limit:
        ok = False
        detail += f"; runtime above {limit:g} s"
    record_acceptance(number, title, ok, detail, seconds)
    assert ok, detail


def test_criterion_1_conjugation_identity():
    t0 = time.perf_counter()
    coeffs = logistic_growth()
    base = weight_catalog("unit-interval")
    bumps = random_bumps(SPEC, 10, seed=7, margin=0.13, radius_range=(0.35, 0.37))
    levels = (9, 17, 33)
    grids = [build_grid(SPEC, m) for m in levels]
    worst_regroup, orders = 0.0, []
    for s in (4.0, 16.0):
        for lam in (1.0, 2.0):
            weight = CarlemanWeight(base, 0.5, lam, s, CENTER)
            for b in bumps:
                errs = []
                for g in grids:
                    w = b.sample(g)
                    direct, expanded = conjugated_apply(w, weight, coeffs)
                    P1, P2, _ = decompose_P(w, weight, coeffs)
                    scale = np.max(np.abs(expanded.values))
                    gap = np.max(np.abs(P1.values + P2.values - expanded.values)) / scale
                    worst_regroup = max(worst_regroup, gap)
                    errs.append(np.max(np.abs(direct.values - expanded.values)))
                orders.append(fitted_order([g.spacings[0] for g in grids], errs))
    ok = worst_regroup <= 1e-12 and min(orders) >= 1.8
    _gate(1, "conjugation identity", ok,
          f"max regroup gap {worst_regroup:.2e} (<= 1e-12), "
          f"min fitted order 9->17->33 {min(orders):.3f} (>= 1.8)", t0, 120)


def test_criterion_2_adjoint_identity():
    t0 = time.perf_counter()
    b_u, b_v = random_bumps(SPEC, 2, seed=3, margin=0.13, radius_range=(0.35, 0.37))
    g_tau = replace(constant(), growth=lambda tau: tau + 0.0,
                    growth_prime=lambda tau: 1.0 + 0 * tau)
    cases = {"logistic-growth": logistic_growth(), "g=tau": g_tau, "constant": constant()}
    res = {k: [] for k in cases}
    # L0 acts along (t, a, tau) only, so those axes are refined and x is held at 9 nodes
    for m in (9, 17, 33, 65):
        g = build_grid(SPEC, [9, m, m, m])
        u, v = b_u.sample(g), b_v.sample(g)
        for name, c in cases.items():
            res[name].append(adjoint_check(u, v, c))
    orders = {name: [math.log2(r[k] / r[k + 1]) for k in range(3)]
              for name, r in res.items() if name != "constant"}
    worst = min(min(o) for o in orders.values())
    const_fine = res["constant"][-1]
    ok = worst >= 1.8 and const_fine <= 1e-8
    _gate(2, "adjoint identity", ok,
          f"min order over three refinements {worst:.3f} (>= 1.8), "
          f"constant-g residual {const_fine:.1e} (<= 1e-8)", t0, 60)


def test_criterion_3_empirical_carleman_estimate():
    t0 = time.perf_counter()
    grid = build_grid(SPEC, [129, 17, 17, 17])
    weight = CarlemanWeight(affine(4.0, -4.0), 0.5, 1.0, 1.0, CENTER)
    bumps = [b.sample(grid) for b in random_bumps(SPEC, 20, seed=1)]
    res = sweep_verify(bumps, [4, 8, 16, 32, 64], [1, 2, 4], weight, logistic_growth(), 1.5)
    finite = all(math.isfinite(r.ratio) and r.status == "ok" for r in res.reports)
    worst = max(res.growth.values())
    ok = finite and len(res.growth) == 60 and worst <= 1.5
    _gate(3, "empirical Carleman estimate", ok,
          f"{len(res.reports)} ratios finite={finite}, "
          f"max ratio(64)/ratio(32) {worst:.3f} (<= 1.5)", t0, 600)


def test_criterion_4_forward_mms():
    t0 = time.perf_counter()
    diff = ManufacturedProblem(
        SPEC, get_preset("pure-diffusion"),
        lambda x, t, a, tau: np.cos(np.pi * x) * np.exp(-t) + 0 * a * tau, name="pure-diffusion")
    comb = ManufacturedProblem(
        SPEC, get_preset("logistic-growth"),
        lambda x, t, a, tau: (np.cos(np.pi * x) * np.exp(-t) * (1 + 0.5 * np.sin(a + t))
                              * (1 + tau**2)),
        name="combined")
    r_diff = convergence_study(diff, levels=3, base=9)
    r_comb = convergence_study(comb, levels=3, base=9)
    g = build_grid(SPEC, 17)
    zero = solve_forward(ForwardProblem(g, get_preset("logistic-growth"),
                                        lambda x, a, tau: 0 * x * a * tau))
    bitwise_zero = not np.any(zero.values) and not np.signbit(zero.values).any()
    ok = min(r_comb.orders) >= 0.9 and min(r_diff.orders) >= 1.8 and bitwise_zero
    _gate(4, "forward-solver MMS", ok,
          f"combined orders {', '.join(f'{o:.3f}' for o in r_comb.orders)} (>= 0.9), "
          f"pure-diffusion orders {', '.join(f'{o:.3f}' for o in r_diff.orders)} (>= 1.8), "
          f"zero data bitwise zero={bitwise_zero}", t0, 300)


def test_criterion_5_geometry():
    t0 = time.perf_counter()
    parts, ok = [], True
    for name in sorted(GEOMETRIES):
        geo = geometry_preset(name)
        grid = build_grid(geo.spec, [65, 33, 33, 33])
        rep = verify_inclusions(geo, 10_000, seed=0, grid=grid)
        ok &= rep.mu_ordered and rep.ok and rep.inner_pass == rep.inner_samples == 10_000
        ok &= rep.boundary_gamma + rep.boundary_level == rep.boundary_nodes > 0
        parts.append(f"{name}: mu ordered={rep.mu_ordered}, "
                     f"{len(rep.counterexamples)} counterexamples, "
                     f"{rep.boundary_nodes} boundary nodes "
                     f"({rep.boundary_gamma} at Gamma, {rep.boundary_level} at mu_1)")
    _gate(5, "geometry", ok, "; ".join(parts), t0, 60)


def test_criterion_6_decay_mechanism():
    t0 = time.perf_counter()
    geo = geometry_preset("unit-interval")
    coeffs = logistic_growth()
    traj = forward_truth(geo, coeffs, [33, 17, 17, 17])
    s_values = [0.0, 5.0, 10.0, 20.0, 40.0, 80.0]
    rows = decay_experiment(traj, geo, coeffs, s_values)
    mu3, mu4 = geo.mu[2], geo.mu[3]
    exact = [math.exp(-2 * s * (mu4 - mu3)) for s in s_values]
    col_err = max(abs(r.bound - e) / e for r, e in zip(rows, exact))
    logs = [math.log(r.bound) for r in rows]
    slopes = [(l2 - l1) / (s2 - s1) for (s1, l1), (s2, l2)
              in zip(zip(s_values, logs), list(zip(s_values, logs))[1:])]
    slope_err = max(abs(sl + 2 * (mu4 - mu3)) for sl in slopes)
    example = decay_bound(10.0, math.exp(0.65), math.exp(0.9))
    example_ok = abs(example - 1.9e-5) / 1.9e-5 < 0.02
    ok = col_err <= 1e-12 and slope_err <= 1e-10 and example_ok
    _gate(6, "decay mechanism", ok,
          f"bound column rel err {col_err:.1e} (<= 1e-12), slope err {slope_err:.1e} "
          f"(<= 1e-10), example s=10 bound {example:.4e} (~1.9e-5)", t0, 60)


@pytest.mark.parametrize("name", ["unit-interval", "unit-ball"])
def test_criterion_7_unique_continuation(name):
    t0 = time.perf_counter()
    geo = geometry_preset(name)
    coeffs = logistic_growth()
    traj = forward_truth(geo, coeffs, [33, 17, 17, 17])
    truth = traj.as_field()
    exact = reconstruct(extract_cauchy(traj, geo), geo, coeffs, 1e-6, truth=truth)
    noisy = reconstruct(extract_cauchy(traj, geo, noise=0.01, seed=0), geo, coeffs, 1e-3,
                        truth=truth)
    ok = exact.interior_error <= 0.1 and noisy.interior_error <= 0.3
    _gate(7, f"unique continuation ({name})", ok,
          f"exact data, alpha 1e-6: error {exact.interior_error:.2e} (<= 0.1); "
          f"1% noise, alpha 1e-3: error {noisy.interior_error:.2e} (<= 0.3)", t0, 600)


def test_criterion_8_determinism(tmp_path):
    t0 = time.perf_counter()
    runs = {
        "simulate": ["--resolution", "17"],
        "carleman-verify": ["--resolution", "65,17,17,17", "--s-list", "8,16", "--seed", "4"],
        "geometry-check": ["--resolution", "33,17,17,17", "--seed", "2"],
        "uc-demo": ["--resolution", "17,9,9,9", "--noise-list", "0,0.01", "--alpha-list", "1e-3",
                    "--seed", "5"],
    }
    mismatched, compared = [], 0
    for kind, flags in runs.items():
        dirs = [tmp_path / f"{kind}-{k}" for k in (0, 1)]
        for d in dirs:
            assert main([kind, "--out", str(d), *flags]) in (0, 1)
        csvs = sorted(p.relative_to(dirs[0]) for p in dirs[0].rglob("*.csv"))
        assert csvs
        for rel in csvs:
            compared += 1
            if not filecmp.cmp(dirs[0] / rel, dirs[1] / rel, shallow=False):
                mismatched.append(f"{kind}/{rel}")
    ok = not mismatched
    _gate(8, "determinism", ok,
          f"{compared} CSV files compared across two runs per subcommand, "
          f"{len(mismatched)} differ" + (f": {mismatched}" if mismatched else ""), t0)
