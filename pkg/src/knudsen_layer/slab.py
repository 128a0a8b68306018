"""Backward characteristics of the geometrically corrected slab problem.

Along a characteristic of

    v1 d_eta f + G(eta) (v2^2 d_v1 f - v1 v2 d_v2 f) = ...,   G = -eps^2 / (1 - eps^2 eta),

the speed |V| and E2 = V2 exp(-W(X)) are conserved, W(eta) = -ln(1 - eps^2 eta).
With r(X) = 1 - eps^2 X these say that L = r V2 is constant, and the
quantity P = r V1 obeys dP/ds = -eps^2 |V|^2.  So P is linear in time and
r^2 = (L^2 + P^2) / |V|^2, which gives the flow in closed form: it is the
straight-line motion of the underlying disk written in the wall-normal
coordinate.  Position updates use the cancellation-free form

    X(s) - X(t) = (s - t) (P(t) + P(s)) / (r(t) + r(s)),

which reduces to free flight at eps = 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DomainError, InvariantError

GUARD = 1e-12


@dataclass(frozen=True)
class SlabGeometry:
    """Slab (0, d) with d = eps^(-a_exp); pass ``d`` explicitly to override."""

    epsilon: float
    a_exp: float
    d: float = None

    def __post_init__(self):
        eps, a = self.epsilon, self.a_exp
        if not (0 <= eps < 1):
            raise InvariantError(f"epsilon must lie in [0, 1), got {eps}")
        if eps == 0:
            if self.d is None or not self.d > 0:
                raise InvariantError("epsilon = 0 needs an explicit positive depth d")
        else:
            if not (0 < a < 2.0 / 3.0):
                raise InvariantError(f"need 0 < a_exp < 2/3, got {a}")
            if self.d is None:
                object.__setattr__(self, "d", float(eps ** (-a)))
        if not self.d * eps ** 2 < 1:
            raise InvariantError("d eps^2 must be below 1")
        object.__setattr__(self, "d", float(self.d))

    @classmethod
    def from_depth(cls, epsilon: float, d: float) -> "SlabGeometry":
        """Geometry with a prescribed depth; a_exp = ln d / ln(1/eps)."""
        a = math.log(d) / math.log(1 / epsilon) if epsilon > 0 else 0.0
        return cls(epsilon, a, d)

    def r(self, eta):
        return 1.0 - self.epsilon ** 2 * np.asarray(eta, dtype=float)


def _check_eta(geom, eta):
    eta = np.asarray(eta, dtype=float)
    if np.any(eta < 0) or np.any(eta > geom.d * (1 + GUARD)):
        raise DomainError(f"eta outside [0, d={geom.d}]")
    return eta


def weight_W(geom: SlabGeometry, eta):
    """W(eta) = -ln(1 - eps^2 eta)."""
    eta = _check_eta(geom, eta)
    return -np.log1p(-geom.epsilon ** 2 * eta)


def geometric_G(geom: SlabGeometry, eta):
    eta = np.asarray(eta, dtype=float)
    return -geom.epsilon ** 2 / (1 - geom.epsilon ** 2 * eta)


@dataclass(frozen=True)
class CharInvariants:
    e1: float
    e2: float


def invariants(geom: SlabGeometry, eta, v) -> CharInvariants:
    r = 1 - geom.epsilon ** 2 * eta
    return CharInvariants(float(v[0] ** 2 + v[1] ** 2), float(v[1] * r))


def _eta_plus_raw(geom, eta, v):
    speed = math.hypot(v[0], v[1])
    if speed == 0:
        raise DomainError("zero velocity has no characteristic")
    if geom.epsilon == 0:
        return math.inf
    k = abs(v[1]) / speed
    return (1 - k) / geom.epsilon ** 2 + k * eta


def turning_point(geom: SlabGeometry, eta, v):
    """eta_+ if the characteristic turns inside the slab, else None."""
    ep = _eta_plus_raw(geom, eta, v)
    if ep <= geom.d * (1 + GUARD):
        return ep
    return None


@dataclass(frozen=True)
class ExitRecord:
    """The backward characteristic left through eta = d before the requested time."""

    exit_time: float
    lapse: float
    velocity: tuple
    reflections: int


@dataclass
class CycleDecomposition:
    case_tag: str
    times: list
    turning_times: list
    eta_plus: float | None
    boundary_velocities: list
    invariants: CharInvariants
    period: float | None = None
    truncated: bool = False
    exit_time: float | None = None


class _Flow:
    """Closed-form backward flow from a single phase point."""

    def __init__(self, geom: SlabGeometry, eta: float, v):
        eta = float(_check_eta(geom, eta))
        v1, v2 = float(v[0]), float(v[1])
        if eta == 0 and v1 == 0:
            raise DomainError("grazing-set state (eta = 0, v1 = 0) is rejected")
        self.geom = geom
        self.eps2 = geom.epsilon ** 2
        self.c2 = v1 * v1 + v2 * v2
        if self.c2 == 0:
            raise DomainError("zero velocity has no characteristic")
        self.c = math.sqrt(self.c2)
        r0 = 1 - self.eps2 * eta
        self.L = r0 * v2
        self.X0, self.P0, self.r0 = eta, r0 * v1, r0
        self.eta_plus_raw = _eta_plus_raw(geom, eta, (v1, v2))
        self.turns = self.eta_plus_raw <= geom.d * (1 + GUARD)
        self.Pw = math.sqrt(max(self.c2 - self.L * self.L, 0.0))
        d = geom.d
        self.rd = 1 - self.eps2 * d
        if self.eta_plus_raw < math.inf:
            gap = self.c * self.eps2 * (self.eta_plus_raw - d) * (self.c * self.rd + abs(self.L))
        else:
            gap = self.c2 * self.rd ** 2 - self.L ** 2
        self.Pd = math.sqrt(max(gap, 0.0))

    def r_of(self, P):
        return math.sqrt(self.L * self.L + P * P) / self.c

    def advance(self, X, P, r, tau):
        """State after backward lapse tau within one segment."""
        P1 = P + self.eps2 * self.c2 * tau
        r1 = self.r_of(P1)
        X1 = X - tau * (P + P1) / (r + r1)
        return max(X1, 0.0), P1, r1

    def segment_end(self, X, P, r):
        """(lapse, kind) of the next event, 'wall', 'exit' or 'stall'.

        The position law holds across a turning point, so the piece
        outward, turn, back to the wall is a single segment.
        """
        if P > 0:
            return X * (r + 1.0) / (P + self.Pw), "wall"
        if self.turns:
            return (self.Pw - P) / (self.eps2 * self.c2), "wall"
        if P == 0 and self.eps2 == 0:
            return math.inf, "stall"
        d = self.geom.d
        return (d - X) * (r + self.rd) / (abs(P) + self.Pd), "exit"

    def velocity(self, P, r):
        return P / r, self.L / r


def trace_backward(geom: SlabGeometry, t: float, eta: float, v, s: float):
    """State (X, V) at the earlier time s, or an ExitRecord if it left through d."""
    if s > t:
        raise DomainError("s must not exceed t")
    fl = _Flow(geom, eta, v)
    lapse = t - s
    X, P, r = fl.X0, fl.P0, fl.r0
    elapsed = 0.0
    refl = 0
    while True:
        dt, kind = fl.segment_end(X, P, r)
        if elapsed + dt >= lapse:
            X, P, r = fl.advance(X, P, r, lapse - elapsed)
            return X, fl.velocity(P, r)
        if kind == "exit":
            V = fl.velocity(-fl.Pd, fl.rd)
            return ExitRecord(t - elapsed - dt, elapsed + dt, V, refl)
        elapsed += dt
        refl += 1
        X, P, r = 0.0, -fl.Pw, 1.0
        if fl.turns:
            period = 2 * fl.Pw / (fl.eps2 * fl.c2)
            if period > 0 and lapse - elapsed > period:
                k = math.floor((lapse - elapsed) / period)
                elapsed += k * period
                refl += k


def trace_forward(geom: SlabGeometry, t: float, eta: float, v, s: float):
    """State at the later time s by time reversal of the backward flow."""
    out = trace_backward(geom, 0.0, eta, (-v[0], -v[1]), t - s)
    if isinstance(out, ExitRecord):
        return ExitRecord(t + out.lapse, out.lapse, (-out.velocity[0], -out.velocity[1]),
                          out.reflections)
    X, V = out
    return X, (-V[0], -V[1])


def _classify(fl: _Flow, v1):
    if fl.turns:
        return "Case2"
    return "Case1_1" if v1 < 0 else "Case1_2"


def cycle_decomposition(geom: SlabGeometry, t: float, eta: float, v, k_max: int = 10,
                        horizon: float | None = None) -> CycleDecomposition:
    """Wall-hit times, turning times and post-reflection velocities.

    For Case 2 the list holds ``k_max`` wall hits unless ``horizon`` (a
    backward lapse) is covered first; ``truncated`` says whether k_max ran out
    before the horizon.
    """
    fl = _Flow(geom, eta, v)
    tag = _classify(fl, v[0])
    inv = CharInvariants(fl.c2, fl.L)
    vk = (-fl.Pw, fl.L)
    if tag == "Case1_1":
        dt, kind = fl.segment_end(fl.X0, fl.P0, fl.r0)
        return CycleDecomposition(tag, [t, t - dt], [], None, [], inv, exit_time=t - dt)
    if tag == "Case1_2":
        dt, _ = fl.segment_end(fl.X0, fl.P0, fl.r0)
        t1 = t - dt
        dt2, _ = fl.segment_end(0.0, -fl.Pw, 1.0)
        return CycleDecomposition(tag, [t, t1, t1 - dt2], [], None, [vk], inv,
                                  exit_time=t1 - dt2)
    times = [t]
    turns = []
    half = fl.Pw / (fl.eps2 * fl.c2)
    first, _ = fl.segment_end(fl.X0, fl.P0, fl.r0)
    if fl.P0 <= 0:
        turns.append(t + fl.P0 / (fl.eps2 * fl.c2))
    times.append(t - first)
    truncated = False
    while True:
        done = horizon is not None and t - times[-1] >= horizon
        if done:
            break
        if len(times) - 1 >= k_max:
            truncated = horizon is not None
            break
        turns.append(times[-1] - half)
        times.append(times[-1] - 2 * half)
    return CycleDecomposition(tag, times, turns, fl.eta_plus_raw, [vk] * (len(times) - 1),
                              inv, period=2 * half, truncated=truncated)


def _snap(x, ep):
    # positions within the guard band of the turning point are the turning point
    if ep < math.inf and abs(x - ep) <= GUARD * max(1.0, ep) * 10:
        return ep
    return x


def time_of_flight(geom: SlabGeometry, eta, v, x_a: float, x_b: float) -> float:
    """Closed-form flight time between positions on one monotone piece."""
    fl = _Flow(geom, eta, v)
    ep = fl.eta_plus_raw
    x_a, x_b = _snap(x_a, ep), _snap(x_b, ep)
    ra, rb = 1 - fl.eps2 * x_a, 1 - fl.eps2 * x_b

    def q(X, r):
        # sqrt(c^2 r^2 - L^2) in a form that stays accurate near the turn
        if ep < math.inf:
            return math.sqrt(max(fl.c * fl.eps2 * (ep - X) * (fl.c * r + abs(fl.L)), 0.0))
        return math.sqrt(max(fl.c2 * r * r - fl.L ** 2, 0.0))

    den = q(x_a, ra) + q(x_b, rb)
    if den == 0:
        return 0.0
    return abs(x_b - x_a) * (ra + rb) / den


def time_of_flight_quadrature(geom: SlabGeometry, e1: float, e2: float, x_a: float,
                              x_b: float, n_panels: int = 8, order: int = 20) -> float:
    """int_{x_a}^{x_b} dX / sqrt(e1 - e2^2 exp(2 W(X))) by Gauss-Legendre panels.

    When the upper end is the turning point the substitution X = eta_+ - u^2
    removes the inverse square-root singularity.
    """
    eps2 = geom.epsilon ** 2
    lo, hi = min(x_a, x_b), max(x_a, x_b)
    x, w = np.polynomial.legendre.leggauss(order)

    def vel(X):
        return np.sqrt(np.maximum(e1 - e2 ** 2 / (1 - eps2 * X) ** 2, 0.0))

    ep = math.inf
    if eps2 > 0 and e2 != 0:
        ep = (1 - abs(e2) / math.sqrt(e1)) / eps2
    lo, hi = _snap(lo, ep), _snap(hi, ep)
    if ep < math.inf and hi <= ep:
        ua, ub = math.sqrt(max(ep - hi, 0.0)), math.sqrt(max(ep - lo, 0.0))
        edges = np.linspace(ua, ub, n_panels + 1)
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            u = a + (x + 1) * (b - a) / 2
            X = ep - u * u
            # e1 - e2^2/r^2 = e1 (r^2 - r+^2)/r^2 with r+ = |e2|/sqrt(e1)
            r = 1 - eps2 * X
            rp = abs(e2) / math.sqrt(e1)
            # r - r+ = eps2 (ep - X) = eps2 u^2, so the weight 2u cancels one u
            g = 2 * r / (math.sqrt(e1) * np.sqrt(eps2 * (r + rp)))
            total += np.sum(w * g) * (b - a) / 2
        return float(total)
    edges = np.linspace(lo, hi, n_panels + 1)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        X = a + (x + 1) * (b - a) / 2
        total += np.sum(w / vel(X)) * (b - a) / 2
    return float(total)


def integrate_characteristic(geom: SlabGeometry, t: float, eta: float, v, s: float,
                             rtol: float = 1e-12, atol: float = 1e-13):
    """Reference solution of the characteristic ODE by adaptive integration.

    Integrates backward in time with event handling for the wall (specular
    flip of V1) and for the exit through eta = d.
    """
    G = lambda X: -geom.epsilon ** 2 / (1 - geom.epsilon ** 2 * X)

    def rhs(tau, y):
        X, V1, V2 = y
        g = G(X)
        return [-V1, -g * V2 * V2, g * V1 * V2]

    def wall(tau, y):
        return y[0]
    wall.terminal = True
    wall.direction = -1

    def top(tau, y):
        return y[0] - geom.d
    top.terminal = True
    top.direction = 1

    lapse = t - s
    tau = 0.0
    y = np.array([eta, v[0], v[1]], dtype=float)
    if eta == 0 and v[0] > 0:
        y[1] = -y[1]
    while tau < lapse:
        sol = solve_ivp(rhs, (tau, lapse), y, method="DOP853", rtol=rtol, atol=atol,
                        events=(wall, top))
        if sol.status == 1:
            if sol.t_events[1].size:
                te = sol.t_events[1][0]
                ye = sol.y_events[1][0]
                return ExitRecord(t - te, te, (ye[1], ye[2]), 0)
            tau = sol.t_events[0][0]
            y = sol.y_events[0][0].copy()
            y[0] = 0.0
            y[1] = -abs(y[1])
            if abs(tau - lapse) < 1e-15:
                break
            continue
        y = sol.y[:, -1]
        tau = lapse
    return float(y[0]), (float(y[1]), float(y[2]))


def trajectory_rows(geom: SlabGeometry, t: float, eta: float, v, s_values):
    """Rows (s, X, V1, V2, E1, E2, segment) along the backward path."""
    rows = []
    for s in s_values:
        out = trace_backward(geom, t, eta, v, s)
        if isinstance(out, ExitRecord):
            break
        X, V = out
        seg = count_reflections(geom, t, eta, v, s)
        r = 1 - geom.epsilon ** 2 * X
        rows.append((s, X, V[0], V[1], V[0] ** 2 + V[1] ** 2, V[1] * r, seg))
    return rows


def count_reflections(geom: SlabGeometry, t: float, eta: float, v, s: float) -> int:
    """Number of wall reflections in the backward lapse t - s."""
    fl = _Flow(geom, eta, v)
    lapse = t - s
    tag = _classify(fl, v[0])
    if tag == "Case1_1":
        return 0
    first, _ = fl.segment_end(fl.X0, fl.P0, fl.r0)
    if lapse < first:
        return 0
    if tag == "Case1_2":
        return 1
    period = 2 * fl.Pw / (fl.eps2 * fl.c2)
    return 1 + int(math.floor((lapse - first) / period)) if period > 0 else 1
