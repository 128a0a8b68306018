"""Backward characteristics in the unit disk with specular reflection.

Polar state (r, phi, vbar) with vbar = (radial, tangential) components.  The
engine traces straight chords in Cartesian coordinates; the closed-form
polar laws (radial distance, angular advance, Jacobian) are evaluated
separately and checked against it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad, solve_ivp

from .errors import DomainError, SegmentError


@dataclass(frozen=True)
class DiskState:
    r: float
    phi: float
    vbar: tuple

    def __post_init__(self):
        if not (0 < self.r <= 1):
            raise DomainError(f"r must lie in (0, 1], got {self.r}")
        if math.hypot(*self.vbar) == 0:
            raise DomainError("zero velocity")

    @property
    def speed(self) -> float:
        return math.hypot(self.vbar[0], self.vbar[1])

    @property
    def speed2(self) -> float:
        return self.vbar[0] ** 2 + self.vbar[1] ** 2

    @property
    def angular_momentum(self) -> float:
        return self.r * self.vbar[1]


def to_cartesian(state: DiskState):
    c, s = math.cos(state.phi), math.sin(state.phi)
    x = np.array([state.r * c, state.r * s])
    v1, v2 = state.vbar
    v = np.array([v1 * c - v2 * s, v1 * s + v2 * c])
    return x, v


def to_polar(x, v, phi_ref=None):
    """(X, Phi, V1, V2) of a Cartesian point; Phi on the branch nearest phi_ref."""
    X = math.hypot(x[0], x[1])
    phi = math.atan2(x[1], x[0])
    if phi_ref is not None:
        phi += 2 * math.pi * round((phi_ref - phi) / (2 * math.pi))
    if X == 0:
        return 0.0, phi, math.hypot(v[0], v[1]), 0.0
    n = x / X
    return X, phi, float(v @ n), float(n[0] * v[1] - n[1] * v[0])


def _is_radial(state):
    return state.vbar[1] * state.r == 0


def turning_radius(state: DiskState) -> float:
    """x_+ = r / sqrt(1 + v1^2 / v2^2), the distance from the centre to the chord."""
    if _is_radial(state):
        raise DomainError("radial chord: the path passes through the centre")
    return state.r * abs(state.vbar[1]) / state.speed


def _half_chord_time(state):
    c2 = state.speed2
    return math.sqrt(max(c2 - state.angular_momentum ** 2, 0.0)) / c2


def first_boundary_time(state: DiskState, t: float) -> float:
    """t_1: the first backward hit of |x| = 1."""
    c2 = state.speed2
    return t - (state.r * state.vbar[0] + math.sqrt(c2 - state.angular_momentum ** 2)) / c2


def first_turning_time(state: DiskState, t: float) -> float:
    """t_{1,0}: closest approach to the centre on the chord after the first hit.

    In the radial case this is the time of the centre crossing.
    """
    c2 = state.speed2
    return t - (state.vbar[0] * state.r + 2 * math.sqrt(c2 - state.angular_momentum ** 2)) / c2


def _window(state, t, s):
    if state.vbar[0] > 0:
        raise DomainError("the closed-form laws are stated for vbar_1 <= 0")
    if _is_radial(state):
        raise DomainError("radial case: vbar_2 r = 0")
    t1 = first_boundary_time(state, t)
    t10 = first_turning_time(state, t)
    if s > t1 + 1e-14 * max(1.0, abs(t1)):
        raise SegmentError(f"s={s} is after the first boundary hit t1={t1}", (t10, t1))
    if s < t10 - 1e-14 * max(1.0, abs(t10)):
        raise SegmentError(f"s={s} is before the turning time t10={t10}", (t10, t1))
    return t1, t10


def radial_position(state: DiskState, t: float, s: float) -> float:
    """X(s) = sqrt(|v|^2 (s - t10)^2 + v2^2 r^2 / |v|^2) on [t10, t1]."""
    _, t10 = _window(state, t, s)
    c2 = state.speed2
    return math.sqrt(c2 * (s - t10) ** 2 + state.angular_momentum ** 2 / c2)


def _asec_from(num, xp):
    # arcsec(y) with y = sqrt(num^2 + xp^2)/xp, written without cancellation
    return math.atan2(num, xp)


def angular_advance(state: DiskState, t: float, s: float, unwrapped: bool = True) -> float:
    """Phi(s) on [t10, t1] from the inverse-secant antiderivative.

    Phi(s) = phi - sgn(v2) [2 asec y(1) - asec y(r) - asec y(X(s))], y(z) = z / x_+.
    """
    _, t10 = _window(state, t, s)
    xp = turning_radius(state)
    c = state.speed
    sg = math.copysign(1.0, state.vbar[1])
    a1 = _asec_from(math.sqrt(max(1 - xp * xp, 0.0)), xp)
    ar = _asec_from(state.r * abs(state.vbar[0]) / c, xp)
    ax = _asec_from(c * max(s - t10, 0.0), xp)
    phi = state.phi - sg * (2 * a1 - ar - ax)
    return phi if unwrapped else phi % (2 * math.pi)


def angular_advance_quadrature(state: DiskState, t: float, s: float) -> float:
    """Same angle by numerical quadrature of dy / (y sqrt(y^2 - 1)).

    With y = cosh z the integrand becomes sech z, which is smooth at y = 1.
    """
    _, t10 = _window(state, t, s)
    xp = turning_radius(state)
    c = state.speed
    sech = lambda z: 1.0 / math.cosh(z)
    # z = asinh(sqrt(y^2 - 1)); sqrt(X^2 - x_+^2) = |v| |s - t10| avoids acosh near 1
    z1 = math.asinh(math.sqrt(max(1 - xp * xp, 0.0)) / xp)
    zr = math.asinh(state.r * abs(state.vbar[0]) / (c * xp))
    zx = math.asinh(c * abs(s - t10) / xp)
    i1, _ = quad(sech, zr, z1, epsabs=1e-14, epsrel=1e-13)
    i2, _ = quad(sech, zx, z1, epsabs=1e-14, epsrel=1e-13)
    return state.phi - math.copysign(1.0, state.vbar[1]) * (i1 + i2)


def jacobian_disk(state: DiskState, t: float, s: float) -> float:
    """X |d(X, Phi)/d vbar| on the window t10 <= s <= t1.

    The bracket's last term times (s - t10) equals x_+ / |v| identically, so
    the expression is evaluated as

        (t - s) |(s - t10)(2 r |v1| / sqrt(|v|^2 - r^2 v2^2) - 1) - r |v1| / |v|^2|,

    which is finite on the whole window, including s = t10.
    """
    t1, t10 = _window(state, t, s)
    v1 = abs(state.vbar[0])
    c2 = state.speed2
    root = math.sqrt(c2 - state.angular_momentum ** 2)
    r = state.r
    return (t - s) * abs((s - t10) * (2 * r * v1 / root - 1) - r * v1 / c2)


def jacobian_formula_literal(state: DiskState, t: float, s: float) -> float:
    """The product form (|v1|/|v2|)(s - t10)(t - s)|E| evaluated term by term.

    At s = t10 the last term of E is infinite and the product is 0 * inf;
    the result is then nan.
    """
    t1, t10 = _window(state, t, s)
    v1, v2 = abs(state.vbar[0]), abs(state.vbar[1])
    c2 = state.speed2
    r = state.r
    X = radial_position(state, t, s)
    y1sq = c2 / (r * r * v2 * v2)
    yxsq = X * X * c2 / (r * r * v2 * v2)
    with np.errstate(divide="ignore", invalid="ignore"):
        third = np.float64(1.0) / np.sqrt(np.float64(yxsq - 1))
        E = 2 / math.sqrt(y1sq - 1) - (v2 / v1 if v1 else np.inf) - third
        return float(np.float64(v1 / v2 * (s - t10) * (t - s)) * np.abs(E))


def cartesian_backward(x, v, lapse: float):
    """Backward straight-chord flight with specular reflection at |x| = 1.

    Returns (x(s), v(s), number of reflections).
    """
    x = np.array(x, dtype=float)
    v = np.array(v, dtype=float)
    remaining = float(lapse)
    refl = 0
    c2 = float(v @ v)
    while True:
        # solve |x - tau v| = 1 for the smallest tau > 0
        b = float(x @ v)
        disc = b * b + c2 * (1 - float(x @ x))
        tau = (b + math.sqrt(max(disc, 0.0))) / c2
        if tau >= remaining:
            return x - remaining * v, v, refl
        x = x - tau * v
        x /= math.hypot(x[0], x[1])
        n = x
        v = v - 2 * float(v @ n) * n
        remaining -= tau
        refl += 1


def cartesian_state(state: DiskState, t: float, s: float):
    x, v = to_cartesian(state)
    xs, vs, k = cartesian_backward(x, v, t - s)
    return xs, vs, k


def polar_from_cartesian(state: DiskState, t: float, s: float):
    """(X, Phi, V1, V2) at time s via the Cartesian engine; Phi unwrapped along the path."""
    x, v = to_cartesian(state)
    # unwrap by following the path in small steps of the polar angle
    lapse = t - s
    n_steps = max(1, int(math.ceil(lapse * state.speed / 0.25)))
    phi = state.phi
    xs = x
    vs = v
    for i in range(1, n_steps + 1):
        xs, vs, _ = cartesian_backward(x, v, lapse * i / n_steps)
        if math.hypot(*xs) > 1e-12:
            phi = to_polar(xs, vs, phi)[1]
    return to_polar(xs, vs, phi)


@dataclass
class DiskCycle:
    case_tag: str
    x_plus: float | None
    t_seq: list
    t_turn: list
    velocities: list
    chord_length: float
    period: float
    truncated: bool = False


def cycle_disk(state: DiskState, t: float, k_max: int = 10) -> DiskCycle:
    """Boundary-hit times, turning times and the polar velocity at each hit.

    ``velocities[k]`` is (V1, V2) just before the hit at ``t_seq[k]`` in
    forward time: V1 = sqrt(|v|^2 - v2^2 r^2) and V2 = v2 r.
    """
    c = state.speed
    c2 = state.speed2
    L = state.angular_momentum
    radial = _is_radial(state)
    xp = None if radial else abs(L) / c
    t1 = first_boundary_time(state, t)
    half = _half_chord_time(state)
    tseq = [t1 - 2 * half * k for k in range(k_max)]
    turns = []
    tstar = t - state.r * state.vbar[0] / c2
    if state.vbar[0] > 0 and tstar > t1:
        turns.append(tstar)
    turns += [tk - half for tk in tseq]
    vk = (math.sqrt(max(c2 - L * L, 0.0)), L)
    return DiskCycle("RadialChord" if radial else "Chord", xp, tseq, turns, [vk] * k_max,
                     2 * math.sqrt(max(1 - (xp or 0.0) ** 2, 0.0)), 2 * half)


def polar_trace(state: DiskState, t: float, s: float):
    """(X, Phi, V1, V2) at time s from the closed-form per-chord polar laws.

    On chord k with closest approach t_{k,0}:
        X^2 = |v|^2 (s - t_{k,0})^2 + x_+^2,
        Phi = Phi_{k,0} + sgn(L) arctan(|v| (s - t_{k,0}) / x_+),
    and Phi_{k,0} changes by 2 arccos(x_+) per chord.  No Cartesian state is
    used.
    """
    c = state.speed
    c2 = state.speed2
    L = state.angular_momentum
    if _is_radial(state):
        return _polar_trace_radial(state, t, s)
    xp = abs(L) / c
    sg = math.copysign(1.0, L)
    t00 = t - state.r * state.vbar[0] / c2
    phi00 = state.phi - sg * math.atan2(c * (t - t00), xp)
    t1 = first_boundary_time(state, t)
    half = _half_chord_time(state)
    if s >= t1:
        tk0, phik0 = t00, phi00
    else:
        k = 1 + int(math.floor((t1 - s) / (2 * half)))
        # angle at the first hit, then whole chords
        phi_t1 = phi00 + sg * math.atan2(c * (t1 - t00), xp)
        step = 2 * math.acos(min(xp, 1.0))
        tk0 = t1 - half - 2 * half * (k - 1)
        phik0 = phi_t1 - sg * (step / 2) - sg * step * (k - 1)
    tau = s - tk0
    X = math.sqrt(c2 * tau * tau + xp * xp)
    phi = phik0 + sg * math.atan2(c * tau, xp)
    return X, phi, c2 * tau / X, L / X


def _polar_trace_radial(state, t, s):
    c = state.speed
    # signed coordinate along the diameter through the start point
    y = state.r
    u = state.vbar[0]
    lapse = t - s
    while True:
        # backward motion: y decreases at rate u
        if u > 0:
            tau = (y + 1) / u
        else:
            tau = (1 - y) / (-u)
        if tau >= lapse:
            y -= lapse * u
            break
        y -= tau * u
        u = -u
        lapse -= tau
    phi = state.phi if y >= 0 else state.phi + math.pi
    return abs(y), phi, (u if y >= 0 else -u), 0.0


def integrate_polar_ode(state: DiskState, t: float, s: float, rtol=1e-13, atol=1e-14):
    """Reference integration of the polar characteristic ODE with wall reflections."""
    def rhs(tau, y):
        X, phi, V1, V2 = y
        return [-V1, -V2 / X, -V2 * V2 / X, V1 * V2 / X]

    def wall(tau, y):
        return y[0] - 1.0
    wall.terminal = True
    wall.direction = 1

    lapse = t - s
    y = np.array([state.r, state.phi, state.vbar[0], state.vbar[1]], dtype=float)
    tau = 0.0
    if state.r == 1 and state.vbar[0] < 0:
        y[2] = -y[2]
    while tau < lapse:
        sol = solve_ivp(rhs, (tau, lapse), y, method="DOP853", rtol=rtol, atol=atol,
                        events=wall)
        if sol.status == 1:
            tau = sol.t_events[0][0]
            y = sol.y_events[0][0].copy()
            y[0] = 1.0
            y[2] = -y[2]
            continue
        y = sol.y[:, -1]
        tau = lapse
    return tuple(float(a) for a in y)


def jacobian_fd(state: DiskState, t: float, s: float, h: float | None = None):
    """X |d(X, Phi)/d vbar| by central differences of the Cartesian engine.

    Returns (richardson_value, value_at_h, value_at_h_over_2).
    """
    h = 1e-6 * (1 + state.speed) if h is None else h

    def xphi(vb):
        st = DiskState(state.r, state.phi, (vb[0], vb[1]))
        x, v = to_cartesian(st)
        xs, _, _ = cartesian_backward(x, v, t - s)
        X = math.hypot(xs[0], xs[1])
        ref = angular_reference(state, t, s)
        phi = math.atan2(xs[1], xs[0])
        phi += 2 * math.pi * round((ref - phi) / (2 * math.pi))
        return np.array([X, phi])

    def jac(step):
        vb = np.array(state.vbar, dtype=float)
        cols = []
        for i in range(2):
            e = np.zeros(2)
            e[i] = step
            cols.append((xphi(vb + e) - xphi(vb - e)) / (2 * step))
        m = np.column_stack(cols)
        X = xphi(vb)[0]
        return X * abs(np.linalg.det(m))

    j1, j2 = jac(h), jac(h / 2)
    return (4 * j2 - j1) / 3, j1, j2


def angular_reference(state, t, s):
    """A branch reference for Phi(s) taken from the closed-form polar trace."""
    return polar_trace(state, t, s)[1]


def free_flight_jacobian_fd(x, v, lapse: float, h: float = 1e-6) -> float:
    """|d X / d v| of the reflection-free map v -> x - lapse v by differences."""
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    cols = []
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        cols.append(((x - lapse * (v + e)) - (x - lapse * (v - e))) / (2 * h))
    return abs(np.linalg.det(np.column_stack(cols)))


def trajectory_rows(state: DiskState, t: float, s_values):
    """Rows (s, X, Phi, V1, V2, x1, x2, segment) along the backward path."""
    x0, v0 = to_cartesian(state)
    rows = []
    for s in s_values:
        X, phi, V1, V2 = polar_trace(state, t, s)
        xs, vs, k = cartesian_backward(x0, v0, t - s)
        rows.append((s, X, phi % (2 * math.pi), V1, V2, float(xs[0]), float(xs[1]), k))
    return rows
