"""Property checks shared by the command line and the acceptance tests.

Every check returns ``CheckResult`` records: a name, the measured value, the
threshold it is compared with and whether the comparison is an upper
(``value < threshold``) or lower (``value > threshold``) bound.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import disk as dk
from . import slab as sl
from .closures import (MacroMoments, build_burnett, check_lift, solve_macro_lift,
                       transport_coefficients)
from .collision import (CollisionOperator, GasState, VelocityGrid, assemble_kernel,
                        check_weighted_kernel_bound, self_adjointness_defect, spectral_gap)
from .errors import KnudsenError


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float
    upper: bool = True
    detail: str = ""
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        if not np.isfinite(self.value):
            return False
        return self.value < self.threshold if self.upper else self.value > self.threshold

    @property
    def margin(self) -> float:
        """Positive when passing: distance to the threshold in the passing direction."""
        return self.threshold - self.value if self.upper else self.value - self.threshold

    def line(self) -> str:
        op = "<" if self.upper else ">"
        tag = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return (f"{tag} {self.name}: {self.value:.6g} {op} {self.threshold:.6g} "
                f"(margin {self.margin:.3g}, {self.seconds:.2f}s){extra}")


@dataclass
class CheckReport:
    results: list = field(default_factory=list)

    def extend(self, items) -> "CheckReport":
        self.results.extend(items)
        return self

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list[str]:
        return [r.line() for r in self.results]


class _Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


# ---------------------------------------------------------------------------
# slab characteristics

def sample_case2_state(geom: sl.SlabGeometry, rng: np.random.Generator, v_max: float = 10.0):
    """Random (eta, v) whose characteristic turns inside the slab.

    The turning point is drawn in (eta, d) and the direction follows from
    eta_+ = (1 - k)/eps^2 + k eta with k = |v2|/|v|.
    """
    if geom.epsilon == 0:
        raise KnudsenError("closed orbits need eps > 0")
    d = geom.d
    while True:
        eta = rng.uniform(0.0, 0.95 * d)
        ep = rng.uniform(eta, d * (1 - 1e-6))
        k = 1.0 - (ep - eta) / (1.0 / geom.epsilon ** 2 - eta)
        c = rng.uniform(0.1, v_max)
        v1 = rng.choice([-1.0, 1.0]) * math.sqrt(max(1.0 - k * k, 0.0)) * c
        v2 = rng.choice([-1.0, 1.0]) * k * c
        if abs(v1) < 1e-8 or sl.turning_point(geom, eta, (v1, v2)) is None:
            continue
        return eta, (v1, v2)


def check_slab_conservation(geom: sl.SlabGeometry, n: int = 100, seed: int = 0,
                            v_max: float = 10.0, min_reflections: int = 10) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    fewest = math.inf
    with _Timer() as tm:
        for _ in range(n):
            eta, v = sample_case2_state(geom, rng, v_max)
            cd = sl.cycle_decomposition(geom, 0.0, eta, v, k_max=min_reflections + 1)
            end = cd.times[-1]
            e0 = sl.invariants(geom, eta, v)
            s_values = np.concatenate([np.linspace(0.0, end, 37), cd.times, cd.turning_times])
            for s in s_values:
                X, V = sl.trace_backward(geom, 0.0, eta, v, float(min(s, 0.0)))
                e = sl.invariants(geom, X, V)
                worst = max(worst, abs(e.e1 - e0.e1) / max(1.0, e0.e1),
                            abs(e.e2 - e0.e2) / max(1.0, abs(e0.e2)))
            fewest = min(fewest, sl.count_reflections(geom, 0.0, eta, v, end))
    return CheckResult("slab_invariant_drift", worst, 1e-10, detail=f"min reflections {fewest}",
                       seconds=tm.seconds)


def check_slab_ode(geom: sl.SlabGeometry, n: int = 100, seed: int = 1,
                   v_max: float = 10.0) -> list[CheckResult]:
    """Closed-form flow and time of flight against adaptive integration."""
    rng = np.random.default_rng(seed)
    worst_x = worst_t = 0.0
    with _Timer() as tm:
        for _ in range(n):
            eta, v = sample_case2_state(geom, rng, v_max)
            cd = sl.cycle_decomposition(geom, 0.0, eta, v, k_max=3)
            s = rng.uniform(cd.times[-1], 0.0)
            X, V = sl.trace_backward(geom, 0.0, eta, v, s)
            Xo, Vo = sl.integrate_characteristic(geom, 0.0, eta, v, s)
            worst_x = max(worst_x, abs(X - Xo), abs(V[0] - Vo[0]), abs(V[1] - Vo[1]))
            ep = sl.turning_point(geom, eta, v)
            inv = sl.invariants(geom, eta, v)
            a, b = sorted(rng.uniform(0.0, ep, 2))
            t_cf = sl.time_of_flight(geom, eta, v, a, b)
            t_q = sl.time_of_flight_quadrature(geom, inv.e1, inv.e2, a, b)
            worst_t = max(worst_t, abs(t_cf - t_q) / max(1.0, abs(t_q)))
    return [CheckResult("slab_closed_form_vs_ode", worst_x, 1e-8, seconds=tm.seconds),
            CheckResult("slab_time_of_flight", worst_t, 1e-8, seconds=0.0)]


# ---------------------------------------------------------------------------
# disk

def random_window_state(rng: np.random.Generator, t: float = 0.0, frac=(0.001, 0.999)):
    """Random disk state with vbar_1 < 0 and a time s inside [t10, t1]."""
    r = rng.uniform(0.05, 1.0)
    phi = rng.uniform(0.0, 2 * math.pi)
    v1 = -rng.uniform(0.05, 3.0)
    v2 = rng.choice([-1.0, 1.0]) * rng.uniform(0.05, 3.0)
    st = dk.DiskState(r, phi, (v1, v2))
    t1 = dk.first_boundary_time(st, t)
    t10 = dk.first_turning_time(st, t)
    s = t10 + rng.uniform(*frac) * (t1 - t10)
    return st, s


def jacobian_rows(n: int = 100, seed: int = 2) -> list[tuple]:
    """(r, phi, vbar1, vbar2, s, formula, fd, rel_error) for random window states at t = 0."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        st, s = random_window_state(rng)
        J = dk.jacobian_disk(st, 0.0, s)
        F = dk.jacobian_fd(st, 0.0, s)[0]
        rows.append((st.r, st.phi, *st.vbar, s, J, F, abs(J - F) / abs(F)))
    return rows


JACOBIAN_COLUMNS = ["r", "phi", "vbar1", "vbar2", "s", "formula", "fd", "rel_error"]


def check_disk_jacobian(n: int = 100, seed: int = 2, ref_state=None,
                        rows: list | None = None) -> list[CheckResult]:
    """Pass a list as ``rows`` to receive the per-sample table."""
    with _Timer() as tm:
        table = jacobian_rows(n, seed)
    if rows is not None:
        rows.extend(table)
    worst = max(r[-1] for r in table)
    out = [CheckResult("disk_jacobian_vs_fd", worst, 1e-5, seconds=tm.seconds)]
    # boundary state: the window reaches s = t
    wall = dk.DiskState(1.0, 0.3, (-1.0, 0.5))
    j_t = dk.jacobian_disk(wall, 0.0, dk.first_boundary_time(wall, 0.0))
    out.append(CheckResult("disk_jacobian_zero_at_t", abs(j_t), 1e-300,
                           detail="r = 1, s = t1 = t"))
    st = ref_state or dk.DiskState(0.8, 0.3, (-1.0, 0.5))
    t = 10.0
    t10 = dk.first_turning_time(st, t)
    j = dk.jacobian_disk(st, t, t10)
    fd = dk.jacobian_fd(st, t, t10)[0]
    out.append(CheckResult("disk_jacobian_zero_at_t10", abs(j), 1e-300,
                           detail=f"closed form {j:.12g}, finite differences {fd:.12g}"))
    return out


def check_polar_cartesian(n: int = 100, seed: int = 3) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = worst_xp = 0.0
    with _Timer() as tm:
        for _ in range(n):
            st = dk.DiskState(rng.uniform(0.05, 1.0), rng.uniform(0, 2 * math.pi),
                              tuple(rng.uniform(-3.0, 3.0, 2)))
            lapse = rng.uniform(0.0, 8.0)
            a = dk.polar_trace(st, 0.0, -lapse)
            b = dk.polar_from_cartesian(st, 0.0, -lapse)
            dphi = (a[1] - b[1] + math.pi) % (2 * math.pi) - math.pi
            worst = max(worst, abs(a[0] - b[0]), abs(dphi), abs(a[2] - b[2]), abs(a[3] - b[3]))
            x, v = dk.to_cartesian(st)
            chord = abs(x[0] * v[1] - x[1] * v[0]) / math.hypot(v[0], v[1])
            worst_xp = max(worst_xp, abs(dk.turning_radius(st) - chord))
    return [CheckResult("disk_polar_vs_cartesian", worst, 1e-10, seconds=tm.seconds),
            CheckResult("disk_turning_radius_vs_chord", worst_xp, 1e-10)]


# ---------------------------------------------------------------------------
# collision operator

def check_collision(op: CollisionOperator, seed: int = 0) -> list[CheckResult]:
    with _Timer() as tm:
        gap = spectral_gap(op)
    sa = self_adjointness_defect(op, seed=seed)
    return [CheckResult("collision_null_residual", float(np.max(op.raw_null_residual)), 1e-3),
            CheckResult("collision_self_adjointness", sa, 1e-6),
            CheckResult("collision_spectral_gap", gap, 0.0, upper=False, seconds=tm.seconds)]


def check_kernel_bound(gas: GasState, beta: float = 4.0, zeta: float | None = None,
                       n_speeds: int = 33, spread: float = 3.0) -> list[CheckResult]:
    zeta = 1.0 / (8.0 * gas.T_M) if zeta is None else zeta
    with _Timer() as tm:
        rep = check_weighted_kernel_bound(gas, beta, zeta, np.linspace(0.0, 8.0, n_speeds),
                                          spread=spread)
    finite = bool(np.all(np.isfinite(rep.ratios)) and np.all(rep.integrals > 0))
    spread_val = float(np.max(rep.ratios) / rep.median_ratio)
    where = rep.speeds[int(np.argmax(rep.ratios))]
    return [CheckResult("kernel_bound_max_ratio", float(np.max(rep.ratios)) if finite else math.inf,
                        math.inf, detail=f"median {rep.median_ratio:.6g}", seconds=tm.seconds),
            CheckResult("kernel_bound_spread", spread_val, spread,
                        detail=f"max at |v| = {where:.3g}, {len(rep.violations)} samples flagged")]


# ---------------------------------------------------------------------------
# closures

def check_burnett(op: CollisionOperator, refined: tuple | None = None,
                  tol: float = 1e-6) -> list[CheckResult]:
    """Burnett identities and kappa; ``refined`` is (kappa1, kappa2) from a finer grid."""
    b = build_burnett(op.gas, op.grid)
    out = [CheckResult("burnett_norm_orthogonality", float(np.max(np.abs(b.gram - op.gas.rho0 * np.eye(4)))),
                       tol),
           CheckResult("burnett_null_components", float(np.max(np.abs(b.null_components))), tol)]
    with _Timer() as tm:
        tc = transport_coefficients(op, b)
    out += [CheckResult("kappa1_positive", tc.kappa1, 0.0, upper=False, seconds=tm.seconds),
            CheckResult("kappa2_positive", tc.kappa2, 0.0, upper=False),
            CheckResult("kappa1_twin_consistency", tc.kappa1_consistency, 1e-4,
                        detail="A11 vs A12"),
            CheckResult("kappa2_twin_consistency", tc.kappa2_consistency, 1e-4,
                        detail="B2 vs B1")]
    if refined is not None:
        for name, a, c in (("kappa1", tc.kappa1, refined[0]), ("kappa2", tc.kappa2, refined[1])):
            out.append(CheckResult(f"{name}_refinement_drift", abs(c - a) / abs(c), 0.01,
                                   detail=f"{a:.10g} -> {c:.10g}"))
    return out


def refined_kappas(gas: GasState, n_per_axis: int, v_max: float, n_omega: int = 64):
    """(kappa1, kappa2) on a separately assembled grid; the operator is dropped afterwards."""
    op = assemble_kernel(gas, VelocityGrid.uniform(n_per_axis, v_max), n_omega=n_omega)
    tc = transport_coefficients(op, build_burnett(gas, op.grid))
    return tc.kappa1, tc.kappa2


def sample_moments(eta) -> MacroMoments:
    return MacroMoments.from_functions(
        eta, lambda z: math.exp(-z), lambda z: 0.3 * math.exp(-2 * z),
        lambda z: math.exp(-z) * math.cos(z), lambda z: 0.5 * math.exp(-1.5 * z))


def check_macro_lift(gas: GasState, geom: sl.SlabGeometry,
                     grid: VelocityGrid | None = None, profiles: list | None = None
                     ) -> list[CheckResult]:
    """Pass a list as ``profiles`` to receive (eta, A, B, C, D) rows of the sample lift."""
    eta = np.linspace(0.0, geom.d, 201)
    with _Timer() as tm:
        lift = solve_macro_lift(gas, geom, sample_moments(eta))
    if profiles is not None:
        profiles.extend(zip(eta, lift.A, lift.B, lift.C, lift.D))
    out = [CheckResult("macro_lift_residual", lift.relative_residual, 1e-8, seconds=tm.seconds)]
    g0 = sl.SlabGeometry(0.0, geom.a_exp, d=geom.d)
    one = lambda z: 1.0
    zero = lambda z: 0.0
    l0 = solve_macro_lift(gas, g0, MacroMoments.from_functions(eta, one, zero, zero, zero))
    err = float(np.max(np.abs(l0.A + (geom.d - eta))))
    out.append(CheckResult("macro_lift_flat_case", err, 64 * np.finfo(float).eps * geom.d,
                           detail="A(eta) = -(d - eta) at eps = 0"))
    if grid is not None:
        ch = check_lift(lift, grid, eta=np.linspace(0.1 * geom.d, 0.9 * geom.d, 5))
        out.append(CheckResult("macro_lift_flux_defect", float(np.max(np.abs(ch.flux_defects))),
                               1e-8))
    return out
