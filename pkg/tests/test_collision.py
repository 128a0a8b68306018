import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from knudsen_layer.collision import (GasState, VelocityGrid, assemble_kernel, build_maxwellian,
                                     check_weighted_kernel_bound, collision_frequency,
                                     compute_nu, invert_L0_on_complement, kernel, project_P0,
                                     self_adjointness_defect, spectral_gap)
from knudsen_layer.closures import build_burnett
from knudsen_layer.errors import GridError, InvariantError, NotSolvableError


def test_gas_invariants_rejected():
    with pytest.raises(InvariantError, match="beta"):
        GasState(beta=2.0)
    with pytest.raises(InvariantError, match="T_M"):
        GasState(T_M=1.2)
    with pytest.raises(InvariantError, match="zeta"):
        GasState(zeta=0.5)


def test_maxwellian_moments():
    grid = VelocityGrid.uniform(96, 8.0)
    mu = build_maxwellian(GasState(), grid)
    assert abs(np.sum(grid.weights * mu) - 1.0) < 1e-8
    g = GasState(u_tau0=0.3)
    mu = build_maxwellian(g, grid)
    assert abs(np.sum(grid.weights * grid.v1 * mu)) < 1e-8
    assert abs(np.sum(grid.weights * grid.v2 * mu) - 0.3) < 1e-8
    g = GasState(rho0=2.0, T0=0.8, T_M=0.6, zeta=0.2)
    mu = build_maxwellian(g, grid)
    assert abs(np.sum(grid.weights * (grid.v1 ** 2 + grid.v2 ** 2) * mu) - 3.2) < 1e-7


def test_small_box_rejected():
    with pytest.raises(GridError):
        build_maxwellian(GasState(u_tau0=3.0), VelocityGrid.uniform(32, 8.0))


def test_collision_frequency_values():
    gas = GasState()
    assert abs(collision_frequency(gas, 0.0, 0.0) - math.sqrt(math.pi / 2)) < 1e-12
    assert abs(collision_frequency(gas, 50.0, 0.0) / 50.0 - 1.0) < 1e-3
    g2 = GasState(rho0=2.0)
    v = (1.3, -0.4)
    assert collision_frequency(g2, *v) == pytest.approx(2 * collision_frequency(gas, *v),
                                                        rel=1e-14)


def test_collision_frequency_by_quadrature():
    gas = GasState(u_tau0=0.3, T0=0.8, T_M=0.6, zeta=0.2)
    v = (1.1, -0.7)
    f = lambda u2, u1: math.hypot(v[0] - u1, v[1] - u2) * gas.mu0(u1, u2)
    q, _ = integrate.dblquad(f, -10, 10, -10, 10, epsabs=1e-11)
    assert collision_frequency(gas, *v) == pytest.approx(q, rel=1e-8)


def test_kernel_symmetric_pointwise():
    gas = GasState(u_tau0=0.2)
    a = kernel(gas, 0.4, -1.0, 1.5, 0.3)
    b = kernel(gas, 1.5, 0.3, 0.4, -1.0)
    assert a == pytest.approx(b, rel=1e-13)


def test_nu_positive(op24):
    nu = compute_nu(op24.gas, op24.grid)
    assert np.all(nu > 0)


def test_null_space_and_symmetry(op32):
    assert np.max(op32.raw_null_residual) < 2e-2
    assert op32.symmetry_defect < 1e-12
    assert self_adjointness_defect(op32) < 1e-10
    for q in op32.p0_basis:
        assert op32.grid.norm(op32.apply_L(q)) < 1e-12


def test_spectral_gap_positive(op32):
    assert spectral_gap(op32) > 0.1


def test_perturbed_kernel_breaks_symmetry(op24):
    bad = op24.perturbed(1e-3, seed=4)
    assert self_adjointness_defect(bad) > 1e-6


def test_projection(op32, rng):
    chi0 = op32.sqrt_mu0
    p = project_P0(op32, chi0)
    assert np.max(np.abs(p.field - chi0)) < 1e-12
    f = rng.standard_normal(op32.grid.size) * op32.sqrt_mu0
    pf = project_P0(op32, f).field
    assert np.max(np.abs(project_P0(op32, pf).field - pf)) < 1e-12


def test_projection_odd_field(op32):
    g, s = op32.grid, op32.sqrt_mu0
    f = g.v1 ** 3 * s
    p = project_P0(op32, f)
    assert abs(p.a) < 1e-12 and abs(p.b2) < 1e-12 and abs(p.c) < 1e-12
    expect = g.inner(f, g.v1 * s) / g.inner(g.v1 * s, g.v1 * s)
    assert p.b1 == pytest.approx(expect, rel=1e-12)


def test_invert_L0(op32, gas):
    assert np.all(invert_L0_on_complement(op32, np.zeros(op32.grid.size)) == 0)
    with pytest.raises(NotSolvableError) as err:
        invert_L0_on_complement(op32, op32.sqrt_mu0)
    m = err.value.moments
    assert m["mass_moment"] == pytest.approx(op32.grid.norm(op32.sqrt_mu0) ** 2, rel=1e-10)
    b = build_burnett(gas, op32.grid)
    h = invert_L0_on_complement(op32, b.a12)
    assert op32.grid.norm(op32.apply_L(h) - b.a12) < 1e-8 * op32.grid.norm(b.a12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_L0_nonnegative_random(op24, seed):
    f = np.random.default_rng(seed).standard_normal(op24.grid.size) * op24.sqrt_mu0 ** 0.5
    assert op24.grid.inner(f, op24.apply_L(f)) >= -1e-12 * op24.grid.norm(f) ** 2


def test_kernel_bound_basic():
    gas = GasState()
    rep = check_weighted_kernel_bound(gas, 0.0, 0.0, speeds=np.linspace(0, 8, 9))
    assert np.all(np.isfinite(rep.ratios)) and np.isfinite(rep.fitted_C)
    assert rep.integrals[0] > 0
    rep = check_weighted_kernel_bound(gas, 4.0, 1 / 6, speeds=np.linspace(2, 8, 7))
    assert np.all((rep.ratios >= 0) & (rep.ratios <= rep.fitted_C))


def test_kernel_bound_rejects_zeta():
    with pytest.raises(InvariantError):
        check_weighted_kernel_bound(GasState(), 4.0, 0.4)
