import math

import numpy as np
import pytest

from knudsen_layer.collision import collision_frequency
from knudsen_layer.errors import ConvergenceError, GridError, NotSolvableError
from knudsen_layer.slab import SlabGeometry, cycle_decomposition
from knudsen_layer.solver import (SlabProblem, bump, bundled_boundary, bundled_problem,
                                  check_solvability, continuation_solve, corrected_divergence,
                                  diagnostics, lift_boundary, make_eta_grid, mild_integral,
                                  mild_sweep, project_solvable, slab_operator, solve_fixed,
                                  unlift, upsilon)

GEOM = SlabGeometry.from_depth(0.04, 4.0)


@pytest.fixture(scope="module")
def eta():
    return make_eta_grid(GEOM.d, 60)


@pytest.fixture(scope="module")
def expo(op24, gas):
    return bundled_problem(GEOM, gas, op24.grid, n_eta=60, family="exponential")


def test_eta_grid():
    e = make_eta_grid(8.0, 200)
    assert e[0] == 0 and e[-1] == 8.0 and e.size == 200
    d = np.diff(e)
    assert np.all(d > 0)
    assert d[1] / d[0] == pytest.approx(1.08)
    with pytest.raises(GridError):
        make_eta_grid(8.0, 2)


def test_cutoffs():
    assert np.all(upsilon(np.array([0.0, 0.3, 0.5])) == 1.0)
    assert np.all(upsilon(np.array([1.0, 2.0])) == 0.0)
    assert bump(0.0) == 1.0 and bump(1.0) == 0.0 and bump(2.0) == 0.0


def test_problem_validation(op24, gas, eta):
    with pytest.raises(GridError):
        SlabProblem(GEOM, gas, op24.grid, eta, np.zeros((3, op24.grid.size)), 0.0)
    with pytest.raises(GridError):
        SlabProblem(GEOM, gas, op24.grid, eta[::-1], np.zeros((59, op24.grid.size)), 0.0)


def test_solvability(op24, gas, eta):
    odd = SlabProblem.from_functions(GEOM, gas, op24.grid, eta,
                                     source_fn=lambda e, a, b: a * gas.sqrt_mu0(a, b) + 0 * e)
    assert check_solvability(odd).max_source_defect < 1e-10
    even = SlabProblem.from_functions(GEOM, gas, op24.grid, eta,
                                      source_fn=lambda e, a, b: gas.sqrt_mu0(a, b) + 0 * e)
    rep = check_solvability(even)
    assert not rep.passed
    assert rep.source_defects[0, 0] == pytest.approx(gas.rho0, rel=1e-6)
    pb = SlabProblem.from_functions(GEOM, gas, op24.grid, eta,
                                    boundary_fn=bundled_boundary(gas))
    assert not check_solvability(pb).boundary_ok
    assert check_solvability(project_solvable(pb)).passed


def test_corrected_divergence_identities(gas, op24):
    grid = op24.grid
    D = corrected_divergence(gas, grid)
    F = np.random.default_rng(0).standard_normal(grid.size) * gas.sqrt_mu0(grid.v1, grid.v2)
    w = grid.weights
    DF = D.apply(F)
    assert abs(np.sum(w * DF)) < 1e-12
    assert abs(np.sum(w * (grid.v1 ** 2 + grid.v2 ** 2) * DF)) < 1e-11
    # d/dv . (a F) tested against v2 gives the v1 v2 moment
    assert np.sum(w * grid.v2 * DF) == pytest.approx(np.sum(w * grid.v1 * grid.v2 * F),
                                                     abs=1e-11)


def test_lift_boundary(op24, gas, eta):
    pr = bundled_problem(GEOM, gas, op24.grid, n_eta=60)
    assert lift_boundary(pr, op24) is pr
    pb = project_solvable(SlabProblem.from_functions(GEOM, gas, op24.grid, eta,
                                                     boundary_fn=bundled_boundary(gas)))
    with pytest.raises(NotSolvableError):
        lift_boundary(SlabProblem.from_functions(GEOM, gas, op24.grid, eta,
                                                 boundary_fn=bundled_boundary(gas)), op24)
    lp = lift_boundary(pb, op24)
    assert not np.any(lp.boundary_datum)
    assert np.all(lp.source[lp.midpoints > 1.0] == 0.0)
    assert check_solvability(lp).max_source_defect < 1e-8
    direct = solve_fixed(pb, op24, tol=1e-12, restart=100)
    lifted = solve_fixed(lp, op24, tol=1e-12, restart=100)
    h = unlift(pb, lifted.h)
    assert np.max(np.abs(h - direct.h)) < 1e-8 * np.max(np.abs(direct.h))


def test_trivial_problem(op24, gas, eta):
    pr = SlabProblem.from_functions(GEOM, gas, op24.grid, eta, lam=0.0)
    assert not np.any(mild_sweep(pr, op24, np.zeros((eta.size, op24.grid.size))))
    sol = solve_fixed(pr.replace(lam=1.0), op24)
    assert not np.any(sol.f)
    assert not sol.diagnostics.sigma_defined
    assert sol.diagnostics.max_b1 == 0.0


def test_mild_integral_single_segment(op24, gas, eta):
    C = 0.7
    src = lambda e, v1, v2: collision_frequency(gas, v1, v2) * C / gas.h_scale(v1, v2) + 0 * e
    pr = SlabProblem.from_functions(GEOM, gas, op24.grid, eta, source_fn=src, lam=0.0)
    v, e0 = (-0.9, 0.3), 1.3
    cd = cycle_decomposition(GEOM, 0.0, e0, v)
    assert cd.case_tag == "Case1_1"
    nu = float(collision_frequency(gas, np.array(v[0]), np.array(v[1])))
    expect = C * (1 - math.exp(nu * cd.times[-1]))
    assert mild_integral(pr, op24, None, e0, v) == pytest.approx(expect, abs=1e-10)


def test_mild_integral_damped_recursion(op24, gas, eta):
    fb = lambda v1, v2: np.where(v1 < 0, v1 * np.exp(-(v1 ** 2 + v2 ** 2)) * (1 + v2), 0.0)
    pr = SlabProblem.from_functions(GEOM, gas, op24.grid, eta, boundary_fn=fb, lam=0.0,
                                    n_damp=2.0)
    v, e0 = (0.05, 1.2), 0.5
    cd = cycle_decomposition(GEOM, 0.0, e0, v, k_max=60)
    assert cd.case_tag == "Case2"
    nu = float(collision_frequency(gas, np.array(v[0]), np.array(v[1])))
    bv = cd.boundary_velocities[0]
    fbv = float(fb(np.array(bv[0]), np.array(bv[1])))
    hs = float(gas.h_scale(np.array(v[0]), np.array(v[1])))
    expect = hs * sum(0.5 ** (k - 1) * math.exp(nu * cd.times[k]) * fbv
                      for k in range(1, len(cd.times)))
    assert mild_integral(pr, op24, None, e0, v) == pytest.approx(expect, rel=1e-12)


def test_relaxation_matches_characteristics(op24, expo):
    pr = expo.replace(lam=0.0)
    sol = solve_fixed(pr, op24)
    g = op24.grid
    for k, j in [(10, g.size // 2 + 5), (30, 100), (45, g.size // 2 + 200)]:
        exact = mild_integral(pr, op24, None, pr.eta[k], tuple(g.nodes[j]))
        assert sol.h[k, j] == pytest.approx(exact, rel=5e-3, abs=1e-3 * np.abs(sol.h).max())


def test_picard_matches_krylov(op24, expo):
    pr = expo.replace(lam=0.5)
    a = solve_fixed(pr, op24, method="picard", tol=1e-12, max_iter=3000)
    b = solve_fixed(pr, op24, tol=1e-13, restart=100)
    assert np.max(np.abs(a.h - b.h)) < 1e-9 * np.max(np.abs(b.h))
    assert a.history[-1] <= 1e-12 < a.history[0]


def test_picard_budget_error(op24, expo):
    with pytest.raises(ConvergenceError) as err:
        solve_fixed(expo.replace(lam=1.0), op24, method="picard", tol=1e-14, max_iter=3)
    assert len(err.value.history) == 3


def test_full_solve_properties(op24, gas):
    # d = 8 keeps the fit window [d/4, 3d/4] away from the inflow end
    expo = bundled_problem(SlabGeometry.from_depth(0.04, 8.0), gas, op24.grid, n_eta=100,
                           family="exponential")
    sol = solve_fixed(expo, op24, tol=1e-11, restart=100)
    d = sol.diagnostics
    assert sol.residual < 1e-10
    assert d.b1_ok and d.flux_ok and d.residual_ok
    assert 0 < d.sigma_fit < 1.0
    so = slab_operator(expo, op24)
    assert np.allclose(so.apply(sol.h), so.rhs(), atol=1e-9 * np.abs(so.rhs()).max())


def test_continuation(op24, expo):
    direct = solve_fixed(expo, op24, tol=1e-12, restart=100)
    cont = continuation_solve(expo, op24, tol=1e-12)
    assert cont.problem.lam == 1.0
    lams = [p["lam"] for p in cont.path if not p.get("rejected")]
    assert lams[-1] == 1.0 and all(np.diff(lams) >= 0)
    assert np.max(np.abs(cont.h - direct.h)) < 1e-9 * np.max(np.abs(direct.h))
    start = continuation_solve(expo.replace(lam=0.0), op24)
    ref = solve_fixed(expo.replace(lam=0.0), op24)
    assert np.array_equal(start.h, ref.h)


def test_damping_cauchy(op24, expo):
    hs = {n: solve_fixed(expo.replace(n_damp=float(n)), op24, tol=1e-12, restart=100).h
          for n in (8, 16, 32, 64)}
    d = [np.max(np.abs(hs[n] - hs[2 * n])) for n in (8, 16, 32)]
    assert d[1] < d[0] and d[2] < d[1]
