import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from knudsen_layer.checks import sample_case2_state
from knudsen_layer.errors import DomainError, InvariantError
from knudsen_layer.slab import (ExitRecord, SlabGeometry, count_reflections,
                                cycle_decomposition, integrate_characteristic, invariants,
                                time_of_flight, time_of_flight_quadrature, trace_backward,
                                trace_forward, trajectory_rows, turning_point, weight_W)

G3 = SlabGeometry(0.3, 0.6)


def test_geometry_validation():
    with pytest.raises(InvariantError):
        SlabGeometry(0.1, 0.7)
    assert SlabGeometry(0.1, 0.5).d == pytest.approx(math.sqrt(10))
    assert SlabGeometry.from_depth(0.04, 8.0).d == 8.0


def test_weight_W():
    g = SlabGeometry(0.1, 0.5)
    assert weight_W(g, 0.0) == 0.0
    g = SlabGeometry(0.1, 0.5, d=20.0)
    assert weight_W(g, 10.0) == pytest.approx(-math.log(0.9), rel=1e-14)
    eta = np.linspace(0, 19, 25)
    lhs = np.expm1(weight_W(g, eta))
    assert np.max(np.abs(lhs - 0.01 * eta / (1 - 0.01 * eta))) < 1e-14


def test_turning_point_examples():
    assert turning_point(SlabGeometry(0.1, 0.5), 0.5, (1.0, 0.0)) is None
    assert turning_point(SlabGeometry(0.1, 0.5), 0.0, (1.0, 1.0)) is None
    ep = turning_point(G3, 1.0, (0.1, 1.0))
    # root of E1 = E2^2 exp(2 W(x))
    inv = invariants(G3, 1.0, (0.1, 1.0))
    root = brentq(lambda x: inv.e1 * (1 - 0.09 * x) ** 2 - inv.e2 ** 2, 1.0, 1 / 0.09 - 1e-9)
    assert ep == pytest.approx(root, rel=1e-12)
    assert ep < G3.d


def test_mirror_case():
    g0 = SlabGeometry(0.0, 0.0, d=2.0)
    X, V = trace_backward(g0, 1.0, 0.5, (1.0, 0.0), 0.3)
    assert X == pytest.approx(0.2, abs=1e-15)
    assert V == (-1.0, 0.0)


def test_grazing_rejected():
    with pytest.raises(DomainError, match="grazing"):
        trace_backward(G3, 0.0, 0.0, (0.0, 1.0), -1.0)


def test_cases():
    g = SlabGeometry(0.1, 0.5)
    c = cycle_decomposition(g, 0.0, 1.0, (-1.0, 0.5))
    assert c.case_tag == "Case1_1" and len(c.times) == 2
    assert isinstance(trace_backward(g, 0.0, 1.0, (-1.0, 0.5), c.times[-1] - 1e-3), ExitRecord)
    c = cycle_decomposition(g, 0.0, 1.0, (1.0, 0.5))
    assert c.case_tag == "Case1_2" and len(c.boundary_velocities) == 1
    c = cycle_decomposition(G3, 0.0, 1.0, (0.1, 1.0), k_max=5)
    assert c.case_tag == "Case2"
    periods = -np.diff(c.times[1:])
    assert len(periods) == 4
    assert np.max(np.abs(periods - periods[0])) < 1e-9


def test_period_matches_time_to_turn():
    eta, v = 1.0, (0.1, 1.0)
    c = cycle_decomposition(G3, 0.0, eta, v, k_max=3)
    ep = turning_point(G3, eta, v)
    inv = invariants(G3, eta, v)
    assert c.period == pytest.approx(2 * time_of_flight_quadrature(G3, inv.e1, inv.e2, 0, ep),
                                     rel=1e-10)
    t1, t2 = c.times[1], c.times[2]
    X1, V1 = trace_backward(G3, 0.0, eta, v, t1 + 1e-12)
    X2, V2 = trace_backward(G3, 0.0, eta, v, t2 + 1e-12)
    assert X1 == pytest.approx(0, abs=1e-10) and X2 == pytest.approx(0, abs=1e-10)
    assert V1[0] == pytest.approx(V2[0], abs=1e-9) and V1[1] == pytest.approx(V2[1], abs=1e-9)


def test_against_ode(rng):
    for _ in range(20):
        eta, v = sample_case2_state(G3, rng, 3.0)
        s = -rng.uniform(0, 20)
        X, V = trace_backward(G3, 0.0, eta, v, s)
        Xo, Vo = integrate_characteristic(G3, 0.0, eta, v, s)
        assert abs(X - Xo) < 1e-8 and abs(V[0] - Vo[0]) < 1e-8 and abs(V[1] - Vo[1]) < 1e-8


def test_time_of_flight():
    eta, v = 1.0, (0.1, 1.0)
    inv = invariants(G3, eta, v)
    for a, b in [(0.2, 0.9), (0.0, turning_point(G3, eta, v))]:
        assert time_of_flight(G3, eta, v, a, b) == pytest.approx(
            time_of_flight_quadrature(G3, inv.e1, inv.e2, a, b), rel=1e-10)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(-5, 5), st.floats(-5, 5), st.floats(0.0, 40.0))
def test_invariants_and_reversibility(eta, v1, v2, lapse):
    g = SlabGeometry(0.3, 0.6)
    if math.hypot(v1, v2) < 1e-3 or (eta == 0 and v1 == 0):
        return
    out = trace_backward(g, 0.0, eta, (v1, v2), -lapse)
    if isinstance(out, ExitRecord):
        return
    X, V = out
    e0, e = invariants(g, eta, (v1, v2)), invariants(g, X, V)
    assert abs(e.e1 - e0.e1) <= 1e-10 * max(1, e0.e1)
    assert abs(e.e2 - e0.e2) <= 1e-10 * max(1, abs(e0.e2))
    if X > 1e-6 and V[0] != 0:
        back = trace_forward(g, -lapse, X, V, 0.0)
        if not isinstance(back, ExitRecord):
            assert back[0] == pytest.approx(eta, abs=1e-7)


def test_drift_over_ten_reflections(rng):
    g = SlabGeometry.from_depth(0.04, 8.0)
    eta, v = sample_case2_state(g, rng)
    c = cycle_decomposition(g, 0.0, eta, v, k_max=11)
    assert count_reflections(g, 0.0, eta, v, c.times[-1]) >= 10
    e0 = invariants(g, eta, v)
    for s in np.linspace(0, c.times[-1], 101):
        X, V = trace_backward(g, 0.0, eta, v, s)
        assert abs(invariants(g, X, V).e2 - e0.e2) < 1e-10


def test_trajectory_rows_mirror_piecewise_linear():
    g0 = SlabGeometry(0.0, 0.0, d=3.0)
    rows = trajectory_rows(g0, 0.0, 1.0, (0.5, 0.2), -np.linspace(0, 5, 11))
    X = np.array([r[1] for r in rows])
    s = np.array([r[0] for r in rows])
    expect = np.abs(1.0 + 0.5 * s)
    assert np.max(np.abs(X - expect)) < 1e-14
