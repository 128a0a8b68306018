"""Burnett functions, transport coefficients and the macroscopic lift.

With c = v - ubar = (v1, v2 - u) the Burnett functions are

    A11 = (c1^2 - c2^2) / (2 T) sqrt(mu0),      A12 = c1 c2 / T sqrt(mu0),
    B1  = c1 (|c|^2 / T - 4) / (2 sqrt(2 T)) sqrt(mu0),   B2 likewise with c2,

each of squared norm rho0.  The lift f1 carries the hydrodynamic part of the
layer source.  Its coefficient profiles solve four first-order ODEs in
divergence form, all with zero data at eta = d:

    (A e^{-W})'                       = a e^{-W}
    (D e^{(u^2/T) W})'                = (b1 / T) e^{(u^2/T) W}
    ((B + (u/T) A) e^{-2W})'          = ((b2 + u a) / T) e^{-2W}
    ((8T^2 C + 2uT B + (4T+u^2) A) e^{-W})' = ((2T+u^2) a + 2u b2 + 4T c) e^{-W}
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from .collision import (CollisionOperator, GasState, VelocityGrid, build_maxwellian,
                        invert_L0_on_complement, project_P0)
from .errors import DomainError, InvariantError
from .slab import SlabGeometry

# Central 7-point first-derivative stencil, sixth order.
_STENCIL = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0
_OFFSETS = np.arange(-3, 4)


@dataclass(frozen=True, eq=False)
class BurnettSet:
    a11: np.ndarray
    a12: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    gram: np.ndarray
    null_components: np.ndarray

    @property
    def fields(self) -> np.ndarray:
        return np.stack([self.a11, self.a12, self.b1, self.b2])


BURNETT_NAMES = ("a11", "a12", "b1", "b2")


def burnett_fields(gas: GasState, v1, v2) -> np.ndarray:
    T = gas.T0
    c1, c2 = np.asarray(v1, float), np.asarray(v2, float) - gas.u_tau0
    s = gas.sqrt_mu0(v1, v2)
    q = (c1 ** 2 + c2 ** 2) / T - 4.0
    k = 1.0 / (2.0 * np.sqrt(2.0 * T))
    return np.stack([(c1 ** 2 - c2 ** 2) / (2 * T) * s, c1 * c2 / T * s,
                     c1 * q * k * s, c2 * q * k * s])


def build_burnett(gas: GasState, grid: VelocityGrid, tol: float = 1e-6,
                  orth_tol: float = 1e-8) -> BurnettSet:
    """Burnett functions on the grid with their norm and orthogonality checked."""
    build_maxwellian(gas, grid)
    F = burnett_fields(gas, grid.v1, grid.v2)
    gram = (F * grid.weights) @ F.T
    null = np.array([grid.norm(f) for f in
                     (project_P0_fields(gas, grid, F))]) / np.sqrt(gas.rho0)
    bad = []
    for i in range(4):
        if abs(gram[i, i] - gas.rho0) > tol * gas.rho0:
            bad.append(f"<{BURNETT_NAMES[i]},{BURNETT_NAMES[i]}> = {gram[i, i]:.12g}")
        for j in range(i + 1, 4):
            if abs(gram[i, j]) > orth_tol:
                bad.append(f"<{BURNETT_NAMES[i]},{BURNETT_NAMES[j]}> = {gram[i, j]:.3e}")
        if null[i] > orth_tol:
            bad.append(f"|P0 {BURNETT_NAMES[i]}| = {null[i]:.3e}")
    if bad:
        raise InvariantError("Burnett identities violated: " + "; ".join(bad))
    for a in (F, gram, null):
        a.setflags(write=False)
    return BurnettSet(F[0], F[1], F[2], F[3], gram, null)


def project_P0_fields(gas: GasState, grid: VelocityGrid, F: np.ndarray) -> np.ndarray:
    """Projection onto the collision invariants without an assembled operator."""
    s = gas.sqrt_mu0(grid.v1, grid.v2)
    c1, c2 = grid.v1, grid.v2 - gas.u_tau0
    chi = np.stack([s, c1 * s, c2 * s, (c1 ** 2 + c2 ** 2 - 2 * gas.T0) * s])
    w = grid.weights
    gram = (chi * w) @ chi.T
    rhs = np.atleast_2d(F * w) @ chi.T
    coef = np.linalg.solve(gram, rhs.T).T
    return (coef @ chi).reshape(np.shape(F))


@dataclass(frozen=True)
class TransportCoefficients:
    kappa1: float
    kappa2: float
    kappa1_a11: float
    kappa2_b2: float

    @property
    def kappa1_consistency(self) -> float:
        return abs(self.kappa1_a11 - self.kappa1) / abs(self.kappa1)

    @property
    def kappa2_consistency(self) -> float:
        return abs(self.kappa2_b2 - self.kappa2) / abs(self.kappa2)


def transport_coefficients(op: CollisionOperator, burnett: BurnettSet,
                           tol: float = 1e-11) -> TransportCoefficients:
    """kappa1 = T <A12, L^-1 A12>, kappa2 = T <B1, L^-1 B1>, plus the A11/B2 twins."""
    T = op.gas.T0
    grid = op.grid
    vals = []
    for f in (burnett.a12, burnett.b1, burnett.a11, burnett.b2):
        g = invert_L0_on_complement(op, f, tol=tol)
        vals.append(T * float(grid.inner(f, g)))
    out = TransportCoefficients(*vals)
    if not (out.kappa1 > 0 and out.kappa2 > 0):
        raise InvariantError(f"non-positive transport coefficients {out}")
    return out


# ---------------------------------------------------------------------------
# macroscopic lift

@dataclass(frozen=True, eq=False)
class MacroMoments:
    """Source moments (a, b1, b2, c) sampled on an eta-grid.

    When ``functions`` is given the profiles are evaluated exactly at any
    point; otherwise a cubic spline through the samples is used.
    """

    eta: np.ndarray
    a_hat: np.ndarray
    b_hat1: np.ndarray
    b_hat2: np.ndarray
    c_hat: np.ndarray
    functions: tuple | None = None

    def __post_init__(self):
        eta = np.asarray(self.eta, float)
        if eta.ndim != 1 or eta.size < 4 or np.any(np.diff(eta) <= 0):
            raise DomainError("eta must be a strictly increasing grid with >= 4 nodes")
        for name in ("a_hat", "b_hat1", "b_hat2", "c_hat"):
            v = np.asarray(getattr(self, name), float)
            if v.shape != eta.shape:
                raise DomainError(f"{name} has shape {v.shape}, expected {eta.shape}")
            if not np.all(np.isfinite(v)):
                raise DomainError(f"{name} is not finite; moments must be integrable")

    @classmethod
    def from_functions(cls, eta, a: Callable, b1: Callable, b2: Callable,
                       c: Callable) -> "MacroMoments":
        eta = np.asarray(eta, float)
        fs = (a, b1, b2, c)
        vals = [np.asarray(np.vectorize(f)(eta), float) for f in fs]
        return cls(eta, *vals, functions=fs)

    @classmethod
    def zeros(cls, eta) -> "MacroMoments":
        z = lambda x: 0.0
        return cls.from_functions(eta, z, z, z, z)

    def callables(self) -> tuple:
        if self.functions is not None:
            return self.functions
        return tuple(CubicSpline(self.eta, v) for v in
                     (self.a_hat, self.b_hat1, self.b_hat2, self.c_hat))


def _W(geom: SlabGeometry, eta):
    # unguarded so derivative stencils may step slightly past [0, d]
    return -np.log1p(-geom.epsilon ** 2 * np.asarray(eta, float))


def _Wp(geom: SlabGeometry, eta):
    e2 = geom.epsilon ** 2
    return e2 / (1.0 - e2 * np.asarray(eta, float))


class _Integrands:
    """The four right-hand sides with their integrating factors applied."""

    def __init__(self, gas: GasState, geom: SlabGeometry, moments: MacroMoments):
        self.T, self.u = gas.T0, gas.u_tau0
        self.geom = geom
        self.a, self.b1, self.b2, self.c = moments.callables()

    def __call__(self, k: int, z: float) -> float:
        T, u, W = self.T, self.u, float(_W(self.geom, z))
        a = float(self.a(z))
        if k == 0:
            return a * np.exp(-W)
        if k == 1:
            return float(self.b1(z)) / T * np.exp(u * u / T * W)
        if k == 2:
            return (float(self.b2(z)) + u * a) / T * np.exp(-2 * W)
        return ((2 * T + u * u) * a + 2 * u * float(self.b2(z))
                + 4 * T * float(self.c(z))) * np.exp(-W)


def _quad(fun, lo, hi, breaks=None):
    if hi == lo:
        return 0.0
    val, err, *rest = quad(fun, lo, hi, epsabs=1e-15, epsrel=1e-13, limit=200,
                           points=breaks, full_output=1)
    if not np.isfinite(val) or (len(rest) > 1 and not np.isfinite(err)):
        raise DomainError(f"moment integral on [{lo}, {hi}] is not finite")
    return val


@dataclass(frozen=True, eq=False)
class MacroLift:
    """Coefficient profiles of the lift, their ODE residuals and the field builder."""

    gas: GasState
    geom: SlabGeometry
    moments: MacroMoments
    eta: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    residuals: np.ndarray
    residual_scale: float
    _integrand: _Integrands = field(repr=False)

    @property
    def max_residual(self) -> float:
        return float(np.max(np.abs(self.residuals)))

    @property
    def relative_residual(self) -> float:
        return self.max_residual / max(self.residual_scale, 1e-300)

    @property
    def terminal_values(self) -> np.ndarray:
        return np.array([self.A[-1], self.B[-1], self.C[-1], self.D[-1]])

    def profiles_at(self, eta) -> np.ndarray:
        """(A, B, C, D) at arbitrary points, by direct quadrature to eta = d."""
        eta = np.atleast_1d(np.asarray(eta, float))
        I = np.array([[_quad(lambda z: self._integrand(k, z), x, self.geom.d)
                       for k in range(4)] for x in eta])
        return _combine(self.gas, self.geom, eta, I)

    def field(self, grid: VelocityGrid, eta=None) -> np.ndarray:
        """f1 on the grid, shape (len(eta), N); defaults to the lift nodes."""
        prof = (np.stack([self.A, self.B, self.C, self.D], axis=1) if eta is None
                else self.profiles_at(eta))
        return lift_field(self.gas, grid, prof)


def _combine(gas: GasState, geom: SlabGeometry, eta, I) -> np.ndarray:
    """Turn the integrals I_k(eta) = int_eta^d rhs_k into (A, B, C, D)."""
    T, u = gas.T0, gas.u_tau0
    W = _W(geom, eta)
    A = -np.exp(W) * I[:, 0]
    D = -np.exp(-u * u / T * W) * I[:, 1]
    B = -(u / T) * A - np.exp(2 * W) * I[:, 2]
    M4 = -np.exp(W) * I[:, 3]
    C = (M4 - 2 * u * T * B - (4 * T + u * u) * A) / (8 * T * T)
    return np.stack([A, B, C, D], axis=1)


def lift_field(gas: GasState, grid: VelocityGrid, prof) -> np.ndarray:
    T, u = gas.T0, gas.u_tau0
    c1, c2 = grid.v1, grid.v2 - u
    s = gas.sqrt_mu0(grid.v1, grid.v2)
    prof = np.atleast_2d(prof)
    A, B, C, D = (prof[:, i:i + 1] for i in range(4))
    return (A / T * c1 + B / T * c1 * c2 + C / T * c1 * (c1 ** 2 + c2 ** 2 - 4 * T)
            + D) * s


def _lift_polynomial_grad(gas: GasState, grid: VelocityGrid, prof):
    """(Q, dQ/dv1, dQ/dv2) where the lift has the form Q sqrt(mu0)."""
    T, u = gas.T0, gas.u_tau0
    c1, c2 = grid.v1, grid.v2 - u
    prof = np.atleast_2d(prof)
    A, B, C, D = (prof[:, i:i + 1] for i in range(4))
    q = c1 ** 2 + c2 ** 2 - 4 * T
    Q = A / T * c1 + B / T * c1 * c2 + C / T * c1 * q + D
    Q1 = A / T + B / T * c2 + C / T * (q + 2 * c1 ** 2)
    Q2 = B / T * c1 + C / T * 2 * c1 * c2
    return Q, Q1, Q2


def _stencil_step(geom: SlabGeometry) -> float:
    return 0.02 * max(1.0, geom.d / 8.0)


def _derivative(fun, eta, h):
    """Sixth-order central difference of a vector-valued function of eta."""
    pts = eta[:, None] + h * _OFFSETS[None, :]
    vals = fun(pts.ravel()).reshape(pts.shape + (-1,))
    return np.tensordot(vals, _STENCIL, axes=([1], [0])) / h


def solve_macro_lift(gas: GasState, geom: SlabGeometry, moments: MacroMoments) -> MacroLift:
    """Closed-form lift profiles with zero terminal data at eta = d.

    The integrals are accumulated cell by cell on the moment grid.  The
    residual of each ODE is evaluated in expanded (non-divergence) form with
    the profile derivative taken by a sixth-order difference of the exact
    representation, so a wrong integrating factor shows up as an O(1) defect.
    """
    eta = np.asarray(moments.eta, float)
    d = geom.d
    if abs(eta[-1] - d) > 1e-12 * max(1.0, d) or eta[0] < 0:
        raise DomainError(f"moment grid must span [0, d] with d = {d}")
    integ = _Integrands(gas, geom, moments)
    n = eta.size
    cells = np.array([[_quad(lambda z: integ(k, z), eta[i], eta[i + 1])
                       for k in range(4)] for i in range(n - 1)])
    I = np.zeros((n, 4))
    I[:-1] = np.cumsum(cells[::-1], axis=0)[::-1]
    prof = _combine(gas, geom, eta, I)
    A, B, C, D = prof.T
    lift = MacroLift(gas, geom, moments, eta, A, B, C, D, np.zeros((4, n)), 1.0, integ)

    # residuals on interior nodes whose stencil stays within the W domain
    h = _stencil_step(geom)
    T, u = gas.T0, gas.u_tau0
    a_f, b1_f, b2_f, c_f = moments.callables()
    mask = (eta - 3 * h >= -d) & (eta + 3 * h < 1.0 / geom.epsilon ** 2 if geom.epsilon > 0
                                  else np.ones_like(eta, bool))
    x = eta[mask]
    dP = _derivative(lift.profiles_at, x, h)
    Wp = _Wp(geom, x)
    Ax, Bx, Cx, Dx = prof[mask].T
    av, b1v, b2v, cv = (np.vectorize(f)(x) for f in (a_f, b1_f, b2_f, c_f))
    M3 = Bx + u / T * Ax
    dM3 = dP[:, 1] + u / T * dP[:, 0]
    M4 = 8 * T * T * Cx + 2 * u * T * Bx + (4 * T + u * u) * Ax
    dM4 = 8 * T * T * dP[:, 2] + 2 * u * T * dP[:, 1] + (4 * T + u * u) * dP[:, 0]
    res = np.zeros((4, n))
    res[0, mask] = dP[:, 0] - Wp * Ax - av
    res[1, mask] = dP[:, 3] + u * u / T * Wp * Dx - b1v / T
    res[2, mask] = dM3 - 2 * Wp * M3 - (b2v + u * av) / T
    res[3, mask] = dM4 - Wp * M4 - ((2 * T + u * u) * av + 2 * u * b2v + 4 * T * cv)
    scale = float(max(np.max(np.abs([moments.a_hat, moments.b_hat1, moments.b_hat2,
                                     moments.c_hat])), 1e-300))
    return MacroLift(gas, geom, moments, eta, A, B, C, D, res, scale, integ)


@dataclass(frozen=True)
class LiftChecks:
    membership: float          # max |P0(transport expression - S1)| / |S1| scale
    flux_defects: np.ndarray   # per conservation statement, max abs defect
    bound_constant: float      # fitted C in the pointwise bound


def _source_field(gas: GasState, grid: VelocityGrid, moments: MacroMoments, eta):
    T, u = gas.T0, gas.u_tau0
    c1, c2 = grid.v1, grid.v2 - u
    s = gas.sqrt_mu0(grid.v1, grid.v2)
    a, b1, b2, c = (np.vectorize(f)(eta)[:, None] for f in moments.callables())
    return (a + b1 / T * c1 + b2 / T * c2 + c / T * (c1 ** 2 + c2 ** 2 - 2 * T)) * s


def check_lift(lift: MacroLift, grid: VelocityGrid, eta=None) -> LiftChecks:
    """Membership of the transported lift in the complement, flux identities, bound."""
    gas, geom = lift.gas, lift.geom
    T, u = gas.T0, gas.u_tau0
    h = _stencil_step(geom)
    if eta is None:
        eta = lift.eta[(lift.eta >= 3 * h) & (lift.eta <= geom.d - 3 * h)]
    eta = np.asarray(eta, float)
    prof = lift.profiles_at(eta)
    dprof = _derivative(lift.profiles_at, eta, h)
    Q, Q1, Q2 = _lift_polynomial_grad(gas, grid, prof)
    s = gas.sqrt_mu0(grid.v1, grid.v2)
    v1, v2 = grid.v1, grid.v2
    c1, c2 = v1, v2 - u
    f = Q * s
    df_eta = lift_field(gas, grid, dprof)
    df1 = (Q1 - Q * c1 / (2 * T)) * s
    df2 = (Q2 - Q * c2 / (2 * T)) * s
    G = -_Wp(geom, eta)[:, None]
    expr = (v1 * df_eta + G * (v2 ** 2 * df1 - v1 * v2 * df2 - u / (2 * T) * v1 * v2 * f)
            - _source_field(gas, grid, lift.moments, eta))
    P = project_P0_fields(gas, grid, expr)
    S = _source_field(gas, grid, lift.moments, eta)
    scale = max(float(np.max(grid.norm(S))), 1e-300)
    membership = float(np.max(grid.norm(P)) / scale)

    # discrete moments of f1 against the analytic right-hand sides
    rho = gas.rho0

    def moms(x):
        F = lift_field(gas, grid, lift.profiles_at(x))
        w = grid.weights * s
        return np.stack([(F * w) @ v1, (F * w) @ v1 ** 2, (F * w) @ (v1 * v2),
                         (F * w) @ (v1 * (v1 ** 2 + v2 ** 2)),
                         (F * w) @ (v1 ** 2 - v2 ** 2)], axis=1)

    m = moms(eta)
    dm = _derivative(moms, eta, h)
    a, b1, b2, c = (np.vectorize(fn)(eta) for fn in lift.moments.callables())
    Wp = _Wp(geom, eta)
    defects = np.array([
        np.max(np.abs(dm[:, 0] - Wp * m[:, 0] - rho * a)),
        np.max(np.abs(dm[:, 1] - Wp * m[:, 4] - rho * b1)),
        np.max(np.abs(dm[:, 2] - 2 * Wp * m[:, 2] - rho * (b2 + u * a))),
        np.max(np.abs(dm[:, 3] - Wp * m[:, 3]
                      - rho * ((2 * T + u * u) * a + 2 * u * b2 + 4 * T * c))),
    ])

    # pointwise bound |f1| <= C (int_eta^d |(a,b,c)|) (1 + |v|)^3 sqrt(mu0)
    fa = lift.moments.callables()
    mag = lambda z: float(np.sqrt(sum(float(fn(z)) ** 2 for fn in fa)))
    tail = np.array([_quad(mag, x, geom.d) for x in eta])
    ok = tail > 1e-12 * max(tail.max(), 1e-300)
    env = (1 + np.hypot(v1, v2)) ** 3 * s
    Cfit = float(np.max(np.abs(f[ok]) / (tail[ok, None] * env))) if ok.any() else 0.0
    return LiftChecks(membership, defects, Cfit)


# ---------------------------------------------------------------------------
# layer moments

@dataclass(frozen=True)
class LayerMoments:
    rho: float
    u_n: float
    u_tau: float
    theta: float
    p: float
    a11_correction: float
    a12_correction: float
    b1_correction: float
    b2_correction: float
    normal_stress: float
    shear_stress: float
    normal_stress_direct: float
    shear_stress_direct: float

    @property
    def identity_defects(self) -> tuple[float, float]:
        return (abs(self.normal_stress - self.normal_stress_direct),
                abs(self.shear_stress - self.shear_stress_direct))


def layer_moments(gas: GasState, op: CollisionOperator | None, f,
                  grid: VelocityGrid | None = None) -> LayerMoments:
    """Hydrodynamic moments of F = sqrt(mu0) f and the Burnett corrections.

    rho = <1, F>, rho0 u = <c, F> and rho0 theta = <|c|^2 - 2 T0, F>, so that
    p = (rho0 theta + 2 rho T0) / 2.  The stresses then split as

        <c1^2, F> = p + T0 <A11, (I - P0) f>,   <c1 c2, F> = T0 <A12, (I - P0) f>,

    and both sides are returned so the identities can be checked.
    """
    grid = op.grid if op is not None else grid
    if grid is None:
        raise DomainError("need an operator or a grid")
    f = np.asarray(f, float)
    T, u, rho0 = gas.T0, gas.u_tau0, gas.rho0
    s = gas.sqrt_mu0(grid.v1, grid.v2)
    c1, c2 = grid.v1, grid.v2 - u
    F = s * f
    w = grid.weights
    rho = float(np.sum(w * F))
    un = float(np.sum(w * c1 * F)) / rho0
    ut = float(np.sum(w * c2 * F)) / rho0
    theta = float(np.sum(w * (c1 ** 2 + c2 ** 2 - 2 * T) * F)) / rho0
    p = 0.5 * (rho0 * theta + 2 * rho * T)
    if op is not None:
        micro = f - project_P0(op, f).field
    else:
        micro = f - project_P0_fields(gas, grid, f[None])[0]
    bf = burnett_fields(gas, grid.v1, grid.v2)
    corr = (bf * w) @ micro
    return LayerMoments(
        rho=rho, u_n=un, u_tau=ut, theta=theta, p=p,
        a11_correction=float(corr[0]), a12_correction=float(corr[1]),
        b1_correction=float(corr[2]), b2_correction=float(corr[3]),
        normal_stress=p + T * float(corr[0]),
        shear_stress=T * float(corr[1]),
        normal_stress_direct=float(np.sum(w * c1 ** 2 * F)),
        shear_stress_direct=float(np.sum(w * c1 * c2 * F)),
    )
