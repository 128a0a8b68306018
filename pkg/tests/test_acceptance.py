"""Acceptance criteria 1 to 10, one summary line each.

The heavy cases share one 96 x 96 operator. The 128 x 128 refinement runs first so the two
large kernels never coexist in memory.
"""
import gc
import math
import time

import numpy as np
import pytest

from knudsen_layer import checks as ck
from knudsen_layer.collision import GasState, VelocityGrid, assemble_kernel
from knudsen_layer.slab import SlabGeometry
from knudsen_layer.solver import (bundled_problem, check_solvability, continuation_solve,
                                  solve_fixed, source_weighted_norm)

from conftest import record

pytestmark = pytest.mark.slow

V_MAX = 8.0
GEOM = SlabGeometry.from_depth(0.04, 4.0)


def _report(n: int, results, seconds: float, limit: float | None = None, extra: str = ""):
    ok = all(r.passed for r in results)
    if limit is not None:
        ok = ok and seconds < limit
    parts = [f"{r.name}={r.value:.3g}{'' if r.passed else '(fail)'}" for r in results]
    budget = f" < {limit:g}s" if limit is not None else ""
    line = f"{'PASS' if ok else 'FAIL'} {n}: " + ", ".join(parts) + f"; {seconds:.1f}s{budget}"
    record(line + (f"; {extra}" if extra else ""))
    return ok


@pytest.fixture(scope="module")
def refined(gas):
    t0 = time.perf_counter()
    k = ck.refined_kappas(gas, 128, V_MAX)
    gc.collect()
    return k, time.perf_counter() - t0


@pytest.fixture(scope="module")
def op96(gas, refined):
    t0 = time.perf_counter()
    op = assemble_kernel(gas, VelocityGrid.uniform(96, V_MAX))
    yield op, time.perf_counter() - t0
    del op
    gc.collect()


def test_criterion_1_slab_conservation():
    t0 = time.perf_counter()
    r = ck.check_slab_conservation(GEOM, n=100, v_max=10.0, min_reflections=10)
    assert _report(1, [r], time.perf_counter() - t0, 5.0)


def test_criterion_2_closed_form_vs_ode():
    t0 = time.perf_counter()
    rs = ck.check_slab_ode(GEOM, n=100)
    assert _report(2, rs, time.perf_counter() - t0, 30.0)


def test_criterion_3_disk_jacobian():
    # the zero at s = t10 is not attained, so this criterion reports a failure
    t0 = time.perf_counter()
    rs = ck.check_disk_jacobian(n=100)
    detail = next(r.detail for r in rs if r.name == "disk_jacobian_zero_at_t10")
    assert _report(3, rs, time.perf_counter() - t0, 10.0, extra=detail)


def test_criterion_4_polar_cartesian():
    t0 = time.perf_counter()
    rs = ck.check_polar_cartesian(n=100)
    assert _report(4, rs, time.perf_counter() - t0)


def test_criterion_5_collision_structure(op96):
    op, t_asm = op96
    t0 = time.perf_counter()
    rs = ck.check_collision(op)
    rs.append(ck.CheckResult("assembly_seconds", t_asm, 120.0))
    assert _report(5, rs, time.perf_counter() - t0)


def test_criterion_6_kernel_bound(gas):
    # the sampled ratio is far from uniform near the origin; reported as measured
    t0 = time.perf_counter()
    rs = ck.check_kernel_bound(gas, beta=4.0, zeta=1.0 / (8.0 * gas.T_M), n_speeds=33)
    detail = "; ".join(f"{r.name}: {r.detail}" for r in rs)
    assert _report(6, rs, time.perf_counter() - t0, extra=detail)


def test_criterion_7_solver(op96, gas):
    op, _ = op96
    tol = 1e-6
    t0 = time.perf_counter()
    ratios, rs = {}, []
    for d in (8.0, 4.0, 2.0):
        pr = bundled_problem(SlabGeometry.from_depth(0.04, d), gas, op.grid, n_eta=200)
        assert check_solvability(pr).passed
        sol = continuation_solve(pr, op)
        diag = sol.diagnostics
        ratios[d] = sol.weighted_sup / source_weighted_norm(pr, op)
        if d == 8.0:
            assert sol.problem.lam == 1.0
            flux = float(np.max(diag.max_flux) / diag.field_norm)
            rs += [ck.CheckResult("residual", sol.residual, tol),
                   ck.CheckResult("b1", diag.max_b1, 1e-8),
                   ck.CheckResult("flux_rel", flux, tol),
                   ck.CheckResult("sigma_fit", diag.sigma_fit, 0.0, upper=False)]
        del sol
    spread = max(ratios.values()) / min(ratios.values())
    rs.append(ck.CheckResult("d_sweep_spread", spread, 2.0))
    seconds = time.perf_counter() - t0
    assert _report(7, rs, seconds, 600.0,
                   extra="96^2 x 200 on one core, d in {8, 4, 2}")


def test_criterion_8_damping_cauchy(op32, gas):
    # lam = 1 with the damped reflection coefficient 1 - 1/n
    t0 = time.perf_counter()
    pr = bundled_problem(GEOM, gas, op32.grid, n_eta=100, family="exponential")
    ns = (4, 8, 16, 32, 64, 128)
    hs = {n: solve_fixed(pr.replace(n_damp=float(n)), op32, tol=1e-12, restart=150).h
          for n in ns}
    gaps = np.array([np.max(np.abs(hs[n] - hs[2 * n])) for n in ns[:-1]])
    ratios = gaps[1:] / gaps[:-1]
    rs = [ck.CheckResult("max_ratio", float(np.max(ratios)), 0.7)]
    assert _report(8, rs, time.perf_counter() - t0,
                   extra="ratios " + ", ".join(f"{q:.3f}" for q in ratios))


def test_criterion_9_macro_lift(gas):
    t0 = time.perf_counter()
    rs = ck.check_macro_lift(gas, SlabGeometry.from_depth(0.04, 8.0))
    assert _report(9, rs, time.perf_counter() - t0)


def test_criterion_10_burnett(op96, refined):
    op, _ = op96
    (k1, k2), t_ref = refined
    t0 = time.perf_counter()
    rs = [r for r in ck.check_burnett(op, (k1, k2), tol=1e-6)
          if "twin" not in r.name]
    assert _report(10, rs, time.perf_counter() - t0 + t_ref,
                   extra=f"kappa1 {k1:.8g}, kappa2 {k2:.8g} at 128^2")
