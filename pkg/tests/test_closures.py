import math

import numpy as np
import pytest

from knudsen_layer.checks import sample_moments
from knudsen_layer.closures import (MacroMoments, build_burnett, burnett_fields, check_lift,
                                    layer_moments, project_P0_fields, solve_macro_lift,
                                    transport_coefficients)
from knudsen_layer.collision import GasState, VelocityGrid, project_P0
from knudsen_layer.errors import DomainError
from knudsen_layer.slab import SlabGeometry

GEOM = SlabGeometry.from_depth(0.04, 8.0)


def test_burnett_identities():
    grid = VelocityGrid.uniform(64, 8.0)
    for gas in (GasState(), GasState(rho0=1.7, u_tau0=0.4)):
        b = build_burnett(gas, grid)
        assert np.max(np.abs(b.gram - gas.rho0 * np.eye(4))) < 1e-6
        assert abs(grid.inner(b.a12, b.b1)) < 1e-8
        assert np.max(np.abs(b.null_components)) < 1e-8


def test_burnett_norm_is_rho0():
    grid = VelocityGrid.uniform(64, 8.0)
    b = build_burnett(GasState(), grid)
    assert grid.inner(b.a11, b.a11) == pytest.approx(1.0, abs=1e-6)


def test_burnett_fields_in_complement(op32, gas):
    F = burnett_fields(gas, op32.grid.v1, op32.grid.v2)
    assert np.max(np.abs(project_P0(op32, F).field)) < 1e-8
    assert np.max(np.abs(project_P0_fields(gas, op32.grid, F))) < 1e-8


def test_transport_coefficients_positive(op32, gas):
    tc = transport_coefficients(op32, build_burnett(gas, op32.grid))
    assert tc.kappa1 > 0 and tc.kappa2 > 0
    assert tc.kappa2_consistency < 1e-10


def test_macro_lift_zero_data():
    eta = np.linspace(0, GEOM.d, 41)
    lift = solve_macro_lift(GasState(), GEOM, MacroMoments.zeros(eta))
    assert np.all(lift.A == 0) and np.all(lift.B == 0) and np.all(lift.C == 0) \
        and np.all(lift.D == 0)


def test_macro_lift_flat_case():
    g0 = SlabGeometry(0.0, 0.5, d=8.0)
    eta = np.linspace(0, 8, 101)
    one, zero = (lambda z: 1.0), (lambda z: 0.0)
    lift = solve_macro_lift(GasState(), g0, MacroMoments.from_functions(eta, one, zero, zero,
                                                                         zero))
    assert np.max(np.abs(lift.A + (8 - eta))) < 8 * np.finfo(float).eps * 8


def test_macro_lift_residual_and_terminal_data():
    eta = np.linspace(0, GEOM.d, 201)
    lift = solve_macro_lift(GasState(u_tau0=0.3), GEOM, sample_moments(eta))
    assert lift.relative_residual < 1e-8
    assert np.max(np.abs(lift.terminal_values)) < 1e-14


def test_macro_lift_field_checks():
    eta = np.linspace(0, GEOM.d, 201)
    lift = solve_macro_lift(GasState(), GEOM, sample_moments(eta))
    ch = check_lift(lift, VelocityGrid.uniform(40, 8.0), eta=np.linspace(0.5, 7.5, 4))
    assert ch.membership < 1e-8
    assert np.max(np.abs(ch.flux_defects)) < 1e-8
    assert math.isfinite(ch.bound_constant) and ch.bound_constant > 0


def test_macro_moments_reject_nonfinite():
    eta = np.linspace(0, 1, 5)
    with pytest.raises(DomainError):
        MacroMoments(eta, np.full(5, np.inf), np.zeros(5), np.zeros(5), np.zeros(5))


def test_layer_moments(op32, gas):
    grid = op32.grid
    s = op32.sqrt_mu0
    f = (0.3 + 0.2 * grid.v1 - 0.1 * grid.v2 + 0.05 * (grid.v1 ** 2 + grid.v2 ** 2 - 2)) * s
    m = layer_moments(gas, op32, f)
    for c in (m.a11_correction, m.a12_correction, m.b1_correction, m.b2_correction):
        assert abs(c) < 1e-10
    assert m.p == pytest.approx(0.5 * (gas.rho0 * m.theta + 2 * m.rho * gas.T0), rel=1e-15)
    b = build_burnett(gas, grid)
    m = layer_moments(gas, op32, b.a12)
    assert m.shear_stress_direct == pytest.approx(gas.T0 * gas.rho0, rel=1e-6)
    assert max(m.identity_defects) < 1e-10
