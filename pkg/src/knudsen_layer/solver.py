"""Discrete solver for the truncated Knudsen-layer problem.

    v1 d_eta f + G (v2^2 d_v1 f - v1 v2 d_v2 f) - (u/2T) G v1 v2 f + nu f - lam K f = S,
    f(0, v)|_{v1>0} = (1 - 1/n) f(0, Rv) + f_b(Rv),     f(d, v)|_{v1<0} = 0.

With F = sqrt(mu0) f and r = 1 - eps^2 eta, multiplying by r gives the
conservation form

    v1 d_eta (r F) - eps^2 div_v(a F) + r sqrt(mu0) (nu f - lam K f) = r sqrt(mu0) S,

a = (v2^2, -v1 v2).  It is discretized by a box scheme: nodal unknowns on the
eta-grid, one equation per cell with the eta-difference of r F and the cell
average of everything else.  The velocity divergence is a central flux
difference plus a rank-three correction that makes the discrete moments of
1, v2 and |v|^2 obey the continuous identities exactly, so that the
(r^k)-scaled fluxes are exactly conserved from cell to cell.

Unknowns are the weighted values h = w (sqrt(mu0)/sqrt(mu_M)) f, and every
equation is scaled by the same factor.  The per-velocity transport part with
the nu term and the boundary conditions is inverted exactly by two sweeps
(incoming velocities from eta = d, then reflection, then outgoing ones).  The
full system is solved by GMRES right-preconditioned with that sweep; the
plain fixed-point iteration on the same sweep is the damped-reflection
Picard scheme and is available as ``method="picard"``.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import PchipInterpolator
from scipy.sparse.linalg import LinearOperator, gmres

from .closures import burnett_fields
from .collision import CollisionOperator, GasState, VelocityGrid, collision_frequency
from .errors import ConvergenceError, DomainError, GridError, NotSolvableError
from .slab import SlabGeometry, _Flow

SOLVABILITY_TOL = 1e-8


# ---------------------------------------------------------------------------
# grids and problems

def make_eta_grid(d: float, n_nodes: int = 200, ratio: float = 1.08,
                  n_geometric: int = 30) -> np.ndarray:
    """Nodes on [0, d]: geometric spacing with the given ratio from the wall, then uniform."""
    if n_nodes < 3:
        raise GridError("need at least 3 eta nodes")
    n_cells = n_nodes - 1
    m = min(n_geometric, n_cells)
    geo = ratio ** np.arange(m)
    tail = n_cells - m
    unit = np.concatenate([geo, np.full(tail, ratio ** m)])
    eta = np.concatenate([[0.0], np.cumsum(unit)])
    eta *= d / eta[-1]
    eta[-1] = d
    return eta


@dataclass(frozen=True, eq=False)
class SlabProblem:
    """Data of one truncated layer problem.

    ``source`` holds S at the cell midpoints, shape (cells, N).  The boundary
    datum is zero-extended to v1 > 0.
    """

    geom: SlabGeometry
    gas: GasState
    grid: VelocityGrid
    eta: np.ndarray
    source: np.ndarray
    boundary_datum: np.ndarray
    lam: float = 1.0
    n_damp: float = math.inf
    source_fn: Callable | None = None
    projected: bool = False
    boundary_fn: Callable | None = None

    def __post_init__(self):
        eta = np.asarray(self.eta, float)
        if eta.ndim != 1 or eta.size < 2 or np.any(np.diff(eta) <= 0):
            raise GridError("eta grid must be strictly increasing")
        if eta[0] != 0.0 or abs(eta[-1] - self.geom.d) > 1e-12 * max(1.0, self.geom.d):
            raise GridError(f"eta grid must run from 0 to d = {self.geom.d}")
        N = self.grid.size
        S = np.asarray(self.source, float)
        if S.shape != (eta.size - 1, N):
            raise GridError(f"source has shape {S.shape}, expected {(eta.size - 1, N)}")
        fb = np.array(np.broadcast_to(self.boundary_datum, (N,)), float)
        fb[self.grid.v1 > 0] = 0.0
        if not (0.0 <= self.lam <= 1.0):
            raise DomainError(f"lambda must lie in [0, 1], got {self.lam}")
        if not self.n_damp >= 1.0:
            raise DomainError(f"damping level n must be >= 1, got {self.n_damp}")
        for a in (eta, S, fb):
            a.setflags(write=False)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "source", S)
        object.__setattr__(self, "boundary_datum", fb)

    @classmethod
    def from_functions(cls, geom: SlabGeometry, gas: GasState, grid: VelocityGrid,
                       eta, source_fn: Callable | None = None,
                       boundary_fn: Callable | None = None, **kw) -> "SlabProblem":
        """``source_fn(eta, v1, v2)`` broadcasts (cells, 1) against (N,)."""
        eta = np.asarray(eta, float)
        mid = 0.5 * (eta[1:] + eta[:-1])
        N = grid.size
        if source_fn is None:
            S = np.zeros((mid.size, N))
        else:
            S = np.broadcast_to(source_fn(mid[:, None], grid.v1[None, :], grid.v2[None, :]),
                                (mid.size, N))
        fb = np.zeros(N) if boundary_fn is None else boundary_fn(grid.v1, grid.v2)
        return cls(geom, gas, grid, eta, S, fb, source_fn=source_fn, boundary_fn=boundary_fn,
                   **kw)

    def replace(self, **kw) -> "SlabProblem":
        return replace(self, **kw)

    @property
    def damping(self) -> float:
        return 1.0 - 1.0 / self.n_damp

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.eta[1:] + self.eta[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.eta)

    @property
    def h_scale(self) -> np.ndarray:
        return self.gas.h_scale(self.grid.v1, self.grid.v2)


# ---------------------------------------------------------------------------
# solvability

def _invariant_rows(gas: GasState, grid: VelocityGrid) -> np.ndarray:
    v1, v2 = grid.v1, grid.v2
    s = gas.sqrt_mu0(v1, v2)
    return np.stack([s, v2 * s, (v1 ** 2 + v2 ** 2) * s])


@dataclass(frozen=True)
class SolvabilityReport:
    source_defects: np.ndarray      # (cells, 3): <S, (1, v2, |v|^2) sqrt(mu0)>
    boundary_defects: np.ndarray    # (3,): <v1 (1, v2, |v|^2) f_b, sqrt(mu0)>
    tol: float

    @property
    def max_source_defect(self) -> float:
        return float(np.max(np.abs(self.source_defects))) if self.source_defects.size else 0.0

    @property
    def max_boundary_defect(self) -> float:
        return float(np.max(np.abs(self.boundary_defects)))

    @property
    def source_ok(self) -> bool:
        return self.max_source_defect <= self.tol

    @property
    def boundary_ok(self) -> bool:
        return self.max_boundary_defect <= self.tol

    @property
    def passed(self) -> bool:
        return self.source_ok and self.boundary_ok


def check_solvability(problem: SlabProblem, tol: float = SOLVABILITY_TOL) -> SolvabilityReport:
    grid = problem.grid
    rows = _invariant_rows(problem.gas, grid)
    src = (problem.source * grid.weights) @ rows.T
    bnd = (rows * grid.v1 * grid.weights) @ problem.boundary_datum
    return SolvabilityReport(src, bnd, tol)


def project_solvable(problem: SlabProblem) -> SlabProblem:
    """Least-squares fix-up of S and f_b onto the solvability constraints.

    S loses its component along (1, v2, |v|^2) sqrt(mu0) in every cell; f_b
    loses a combination of v1 (1, v2, |v|^2) sqrt(mu0) restricted to v1 < 0.
    """
    grid = problem.grid
    w = grid.weights
    rows = _invariant_rows(problem.gas, grid)
    gram = (rows * w) @ rows.T
    coef = np.linalg.solve(gram, ((problem.source * w) @ rows.T).T).T
    S = problem.source - coef @ rows
    neg = (grid.v1 < 0).astype(float)
    basis = rows * grid.v1 * neg
    flux = rows * grid.v1 * w
    c = np.linalg.solve(flux @ basis.T, flux @ problem.boundary_datum)
    fb = problem.boundary_datum - c @ basis
    return problem.replace(source=S, boundary_datum=fb, projected=True, source_fn=None,
                           boundary_fn=None)


# ---------------------------------------------------------------------------
# velocity divergence

def divergence_matrix(grid: VelocityGrid) -> sp.csr_matrix:
    """Central flux difference of div(a F), a = (v2^2, -v1 v2), zero flux at the box edge."""
    n = grid.n_per_axis
    h = grid.h
    ax = grid.axis
    faces = 0.5 * (ax[1:] + ax[:-1])
    rows, cols, vals = [], [], []

    def idx(i, j):
        return i * n + j

    I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    I, J = I.ravel(), J.ravel()
    # faces in v1 between (i, j) and (i+1, j): flux a1 = v2^2
    m = I < n - 1
    i, j = I[m], J[m]
    a1 = ax[j] ** 2 / (2 * h)
    for (r, c, s) in ((idx(i, j), idx(i, j), -1), (idx(i, j), idx(i + 1, j), -1),
                      (idx(i + 1, j), idx(i, j), 1), (idx(i + 1, j), idx(i + 1, j), 1)):
        rows.append(r)
        cols.append(c)
        vals.append(s * a1)
    # faces in v2 between (i, j) and (i, j+1): flux a2 = -v1 v2
    m = J < n - 1
    i, j = I[m], J[m]
    a2 = -ax[i] * faces[j] / (2 * h)
    for (r, c, s) in ((idx(i, j), idx(i, j), -1), (idx(i, j), idx(i, j + 1), -1),
                      (idx(i, j + 1), idx(i, j), 1), (idx(i, j + 1), idx(i, j + 1), 1)):
        rows.append(r)
        cols.append(c)
        vals.append(s * a2)
    N = n * n
    D = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N))
    return D.tocsr()


@dataclass(frozen=True, eq=False)
class CorrectedDivergence:
    """div(a F) = D F + U (V F): sparse part plus the rank-three moment correction.

    Discrete identities, <.,.> the grid quadrature:
    <1, div> = 0, <|v|^2, div> = 0, <v2, div(aF)> = <v1 v2, F>.
    """

    sparse: sp.csr_matrix
    U: np.ndarray
    V: np.ndarray

    def apply(self, F):
        F = np.asarray(F, float)
        return (self.sparse @ F.T).T + (F @ self.V.T) @ self.U.T

    def scaled(self, s: np.ndarray) -> "CorrectedDivergence":
        """Conjugated operator x -> (1/s) div(a (s x))."""
        D = sp.diags(1.0 / s) @ self.sparse @ sp.diags(s)
        return CorrectedDivergence(D.tocsr(), self.U / s[:, None], self.V * s[None, :])


def corrected_divergence(gas: GasState, grid: VelocityGrid) -> CorrectedDivergence:
    D = divergence_matrix(grid)
    v1, v2 = grid.v1, grid.v2
    w = grid.weights
    Phi = np.stack([np.ones_like(v1), v2, v1 ** 2 + v2 ** 2])
    target = np.stack([np.zeros_like(v1), w * v1 * v2, np.zeros_like(v1)])
    g = gas.mu0(v1, v2)
    gram = (Phi * w * g) @ Phi.T
    U = np.linalg.solve(gram, Phi * g).T  # (N, 3), <Phi_i, U_j> = delta_ij
    current = np.asarray((sp.diags(w) @ D).T @ Phi.T).T  # Phi^T W D
    return CorrectedDivergence(D, U, target - current)


# ---------------------------------------------------------------------------
# discrete operator

_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


class SlabOperator:
    """Box-scheme operator of a problem in weighted variables.

    Arrays of unknowns have shape (nodes, N).  Residual rows have the same
    shape: row 0 carries the boundary conditions (reflection for v1 > 0,
    zero inflow at d for v1 < 0), row k >= 1 the equation of cell k.
    """

    def __init__(self, problem: SlabProblem, op: CollisionOperator):
        if op.grid is not problem.grid and (op.grid.n_per_axis != problem.grid.n_per_axis
                                            or op.grid.v_max != problem.grid.v_max):
            raise GridError("collision operator and problem use different velocity grids")
        self.problem = problem
        self.op = op
        grid, gas = problem.grid, problem.gas
        self.scale = problem.h_scale
        self.nu = op.nu
        v1 = grid.v1
        self.v1 = v1
        eta = problem.eta
        r = problem.geom.r(eta)
        dx = np.diff(eta)
        self.rbar = problem.geom.r(problem.midpoints)
        self.alpha = v1[None, :] * r[1:, None] / dx[:, None] + 0.5 * self.rbar[:, None] * self.nu
        self.beta = v1[None, :] * r[:-1, None] / dx[:, None] - 0.5 * self.rbar[:, None] * self.nu
        self.neg = v1 < 0
        self.pos = ~self.neg
        self.mirror = grid.mirror_index
        self.eps2 = problem.geom.epsilon ** 2
        sm = gas.sqrt_mu0(grid.v1, grid.v2)
        # F = sqrt(mu0) f = (sqrt(mu0) / scale) h
        self.div_F = corrected_divergence(gas, grid)
        self.div_h = self.div_F.scaled(sm / self.scale)
        self.shape = (eta.size, grid.size)

    # pieces -----------------------------------------------------------------
    def collision_K(self, hbar, lam=None):
        """lam * scale * K_c (hbar / scale), K_c = nu - L0 with the conservative L0."""
        lam = self.problem.lam if lam is None else lam
        if lam == 0:
            return np.zeros_like(hbar)
        f = hbar / self.scale
        return lam * self.scale * (self.nu * f - self.op.apply_L(f))

    def coupling(self, x, lam=None):
        """Off-sweep part: eps^2 D xbar + lam rbar K xbar on cell rows."""
        xbar = 0.5 * (x[1:] + x[:-1])
        out = np.zeros(self.shape)
        if self.eps2 > 0:
            out[1:] += self.eps2 * self.div_h.apply(xbar)
        out[1:] += self.rbar[:, None] * self.collision_K(xbar, lam)
        return out

    def apply_P(self, x):
        y = np.empty(self.shape)
        y[1:] = self.alpha * x[1:] - self.beta * x[:-1]
        p, m = self.pos, self.neg
        y[0, p] = x[0, p] - self.problem.damping * x[0, self.mirror[p]]
        y[0, m] = x[-1, m]
        return y

    def sweep(self, y):
        """Exact inverse of the per-velocity transport, nu and boundary part."""
        x = np.empty(self.shape)
        m, p = self.neg, self.pos
        K = self.shape[0] - 1
        a_m, b_m, y_m = self.alpha[:, m], self.beta[:, m], y[:, m]
        xm = np.empty((K + 1, m.sum()))
        xm[K] = y_m[0]
        for k in range(K, 0, -1):
            xm[k - 1] = (a_m[k - 1] * xm[k] - y_m[k]) / b_m[k - 1]
        x[:, m] = xm
        a_p, b_p, y_p = self.alpha[:, p], self.beta[:, p], y[:, p]
        xp = np.empty((K + 1, p.sum()))
        xp[0] = self.problem.damping * x[0, self.mirror[p]] + y_p[0]
        for k in range(1, K + 1):
            xp[k] = (y_p[k] + b_p[k - 1] * xp[k - 1]) / a_p[k - 1]
        x[:, p] = xp
        return x

    def apply(self, x, lam=None):
        return self.apply_P(x) - self.coupling(x, lam)

    def rhs(self):
        pr = self.problem
        b = np.zeros(self.shape)
        b[1:] = self.rbar[:, None] * self.scale * pr.source
        p = self.pos
        b[0, p] = self.scale[p] * pr.boundary_datum[self.mirror[p]]
        return b

    def transport_solve(self, y, tol: float = 1e-14, max_iter: int = 200):
        """Inverse of the transport operator with the velocity drift, no K."""
        x = self.sweep(y)
        if self.eps2 == 0:
            return x
        for _ in range(max_iter):
            xn = self.sweep(y + self.coupling(x, lam=0.0))
            delta = np.max(np.abs(xn - x))
            x = xn
            if delta <= tol * max(np.max(np.abs(x)), 1e-300):
                return x
        raise ConvergenceError("transport drift iteration did not converge", [delta])


def slab_operator(problem: SlabProblem, op: CollisionOperator) -> SlabOperator:
    per = _CACHE.setdefault(problem, {})
    key = id(op)
    if key not in per:
        per[key] = SlabOperator(problem, op)
    return per[key]


# ---------------------------------------------------------------------------
# boundary lifting

def upsilon(z):
    """Smooth monotone cutoff: 1 on [0, 1/2], 0 on [1, inf)."""
    z = np.asarray(z, float)

    def bump(t):
        return np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)

    a, b = bump(1.0 - z), bump(z - 0.5)
    return a / (a + b)


def lift_boundary(problem: SlabProblem, op: CollisionOperator,
                  tol: float = SOLVABILITY_TOL) -> SlabProblem:
    """Problem for f^c = f + Upsilon(eta) f_b, which has homogeneous boundary data.

    The extra source is the box-scheme operator (at lambda = 1) applied to
    Upsilon f_b, so f = f^c - Upsilon f_b holds at the discrete level.
    """
    fb = problem.boundary_datum
    if not np.any(fb):
        return problem
    rep = check_solvability(problem, tol)
    if not rep.boundary_ok:
        raise NotSolvableError(
            f"boundary datum violates the flux conditions (max defect "
            f"{rep.max_boundary_defect:.3e}); see check_solvability / project_solvable",
            {"boundary_defects": rep.boundary_defects.tolist()})
    base = problem.replace(boundary_datum=np.zeros_like(fb), lam=1.0, boundary_fn=None)
    so = SlabOperator(base, op)
    up = upsilon(problem.eta)
    X = up[:, None] * (so.scale * fb)[None, :]
    rows = so.apply(X, lam=1.0)[1:]
    extra = rows / (so.rbar[:, None] * so.scale[None, :])
    return problem.replace(source=problem.source + extra,
                           boundary_datum=np.zeros_like(fb), source_fn=None, boundary_fn=None)


def unlift(problem: SlabProblem, lifted_h: np.ndarray) -> np.ndarray:
    """h of the original problem from the lifted solution."""
    up = upsilon(problem.eta)
    return lifted_h - up[:, None] * (problem.h_scale * problem.boundary_datum)[None, :]


# ---------------------------------------------------------------------------
# solutions and diagnostics

@dataclass(frozen=True)
class DecayReport:
    sigma_fit: float
    fit_window: tuple
    b1: np.ndarray
    flux_moments: np.ndarray      # (nodes, 3): int v1 F, int v1 v2 F, int v1 |v|^2 F
    weighted_sup: np.ndarray      # sup_v |h(eta, v)|
    residual_l2: float
    field_norm: float
    b1_tol: float = 1e-8
    flux_tol: float = 1e-6
    residual_tol: float = 1e-6

    @property
    def sigma_defined(self) -> bool:
        return bool(np.isfinite(self.sigma_fit))

    @property
    def max_b1(self) -> float:
        return float(np.max(np.abs(self.b1)))

    @property
    def flux_variation(self) -> np.ndarray:
        m = self.flux_moments[:, 1:]
        return np.max(np.abs(m - m.mean(axis=0)), axis=0)

    @property
    def max_flux(self) -> np.ndarray:
        return np.max(np.abs(self.flux_moments[:, 1:]), axis=0)

    @property
    def b1_ok(self) -> bool:
        return self.max_b1 <= self.b1_tol

    @property
    def flux_ok(self) -> bool:
        return bool(np.all(self.max_flux <= self.flux_tol * max(self.field_norm, 1e-300)))

    @property
    def residual_ok(self) -> bool:
        return self.residual_l2 <= self.residual_tol

    @property
    def passed(self) -> bool:
        return self.b1_ok and self.flux_ok and self.residual_ok and self.sigma_defined \
            and self.sigma_fit > 0


@dataclass(frozen=True, eq=False)
class SlabSolution:
    problem: SlabProblem
    h: np.ndarray
    residual: float
    iterations: int
    method: str
    history: list = field(default_factory=list)
    path: list = field(default_factory=list)
    diagnostics: DecayReport | None = None

    @property
    def f(self) -> np.ndarray:
        return self.h / self.problem.h_scale

    @property
    def weighted_sup(self) -> float:
        return float(np.max(np.abs(self.h)))

    @property
    def boundary_trace(self) -> np.ndarray:
        """f on the outgoing set: eta = 0 with v1 < 0 and eta = d with v1 > 0."""
        g = self.problem.grid
        f = self.f
        return np.where(g.v1 < 0, f[0], f[-1])


def relative_residual(so: SlabOperator, h: np.ndarray) -> float:
    b = so.rhs()
    r = b - so.apply(h)
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(r) / nb) if nb > 0 else float(np.linalg.norm(r))


def diagnostics(solution: SlabSolution, window: tuple | None = None) -> DecayReport:
    pr = solution.problem
    gas, grid = pr.gas, pr.grid
    f = solution.f
    v1, v2 = grid.v1, grid.v2
    s = gas.sqrt_mu0(v1, v2)
    w = grid.weights
    F = f * s
    fluxes = np.stack([F @ (w * v1), F @ (w * v1 * v2), F @ (w * v1 * (v1 ** 2 + v2 ** 2))],
                      axis=1)
    b1 = (F @ (w * v1)) / (gas.rho0 * gas.T0)
    sup = np.max(np.abs(solution.h), axis=1)
    d = pr.geom.d
    lo, hi = window if window is not None else (d / 4, 3 * d / 4)
    sel = (pr.eta >= lo) & (pr.eta <= hi) & (sup > 0)
    if sel.sum() >= 2 and np.max(sup) > 0:
        slope = np.polyfit(pr.eta[sel], np.log(sup[sel]), 1)[0]
        sigma = float(-slope)
    else:
        sigma = float("nan")
    return DecayReport(sigma, (lo, hi), b1, fluxes, sup, solution.residual,
                       float(np.max(np.abs(F))))


# ---------------------------------------------------------------------------
# one Picard update and its exact characteristic form

def mild_sweep(problem: SlabProblem, op: CollisionOperator, h: np.ndarray) -> np.ndarray:
    """One damped-reflection Picard update on the grid.

    h' solves the transport problem with the velocity drift, attenuation nu,
    the boundary conditions of the problem and the right-hand side
    lam K_{M,w} h + w S.
    """
    so = slab_operator(problem, op)
    h = np.asarray(h, float)
    y = so.rhs()
    if problem.lam:
        hbar = 0.5 * (h[1:] + h[:-1])
        y[1:] += so.rbar[:, None] * so.collision_K(hbar)
    return so.transport_solve(y)


class _FieldInterp:
    """Monotone cubic in eta, bilinear in v, zero outside the velocity box."""

    def __init__(self, eta, values, grid: VelocityGrid):
        self.p = PchipInterpolator(eta, values, axis=0, extrapolate=True)
        self.grid = grid

    def __call__(self, X, V1, V2):
        g = self.grid
        n, h = g.n_per_axis, g.h
        vals = self.p(X)                               # (Q, N)
        out = np.zeros(X.shape)
        t1 = (V1 + g.v_max) / h - 0.5
        t2 = (V2 + g.v_max) / h - 0.5
        i0, j0 = np.floor(t1).astype(int), np.floor(t2).astype(int)
        a, b = t1 - i0, t2 - j0
        q = np.arange(X.size)
        for di, wi in ((0, 1 - a), (1, a)):
            for dj, wj in ((0, 1 - b), (1, b)):
                i, j = i0 + di, j0 + dj
                ok = (i >= 0) & (i < n) & (j >= 0) & (j < n)
                col = np.where(ok, i * n + j, 0)
                out += np.where(ok, wi * wj * vals[q, col], 0.0)
        return out


def mild_integral(problem: SlabProblem, op: CollisionOperator | None, h: np.ndarray | None,
                  eta: float, v, attenuation_tol: float = 1e-14, k_max: int = 10000,
                  order: int = 24) -> float:
    """Picard update at one phase point by integration along its exact characteristic.

    Uses the closed-form backward flow with reflections, attenuation
    exp(-int (nu - (u/2T) G V1 V2)), damping (1 - 1/n) per reflection and the
    boundary datum at every wall hit.  The source is evaluated from
    ``source_fn`` when present; ``lam K f`` is interpolated from the grid.
    Returns the weighted value h' = w (sqrt(mu0)/sqrt(mu_M)) f'.
    """
    gas, geom, grid = problem.gas, problem.geom, problem.grid
    T, u = gas.T0, gas.u_tau0
    x_gl, w_gl = leggauss(order)
    eps2 = geom.epsilon ** 2

    kf = None
    if problem.lam and h is not None and op is not None:
        f = np.asarray(h, float) / problem.h_scale
        kf = _FieldInterp(problem.eta, problem.lam * (op.nu * f - op.apply_L(f)), grid)
    src = problem.source_fn
    src_interp = None if src is not None else _FieldInterp(problem.midpoints, problem.source, grid)
    fb = problem.boundary_datum
    if problem.boundary_fn is not None:
        bfn = problem.boundary_fn
        fb_at = lambda V1, V2: float(np.asarray(bfn(np.array([V1]), np.array([V2])))[0])
    elif np.any(fb):
        fb_interp = _FieldInterp(np.array([0.0, 1.0]), np.vstack([fb, fb]), grid)
        fb_at = lambda V1, V2: float(fb_interp(np.array([0.0]), np.array([V1]),
                                               np.array([V2]))[0])
    else:
        fb_at = None

    def g_at(X, V1, V2):
        if src is not None:
            out = np.asarray(src(X, V1, V2), float) * np.ones_like(X)
        else:
            out = src_interp(X, V1, V2)
        if kf is not None:
            out = out + kf(X, V1, V2)
        return out

    def rate(X, V1, V2):
        nu = collision_frequency(gas, V1, V2)
        if u == 0 or eps2 == 0:
            return nu
        G = -eps2 / (1 - eps2 * X)
        return nu - u / (2 * T) * G * V1 * V2

    fl = _Flow(geom, eta, v)
    X, P, r = fl.X0, fl.P0, fl.r0
    expo = 0.0
    weight = 1.0
    total = 0.0
    refl = 0
    nu_ref = float(collision_frequency(gas, np.asarray(v[0]), np.asarray(v[1])))
    panel = 0.5 / max(1.0, nu_ref)
    while True:
        seg, kind = fl.segment_end(X, P, r)
        start = (X, P, r)
        t0 = 0.0
        while t0 < seg:
            if weight * math.exp(-expo) < attenuation_tol:
                return float(total * _scale(gas, v))
            t1 = min(seg, t0 + panel)
            taus = t0 + 0.5 * (t1 - t0) * (x_gl + 1)
            Xs, Ps, rs = _advance_many(fl, start, taus)
            V1s, V2s = Ps / rs, fl.L / rs
            # attenuation exponent at every node: nested rule from the panel start
            sub = t0 + 0.5 * (taus[:, None] - t0) * (x_gl[None, :] + 1)
            Xn, Pn, rn = _advance_many(fl, start, sub.ravel())
            rr = rate(Xn, Pn / rn, fl.L / rn).reshape(sub.shape)
            e_nodes = expo + 0.5 * (taus - t0) * (rr @ w_gl)
            vals = g_at(Xs, V1s, V2s)
            total += weight * 0.5 * (t1 - t0) * np.sum(w_gl * np.exp(-e_nodes) * vals)
            # exponent at the panel end
            expo += 0.5 * (t1 - t0) * float(np.dot(w_gl, rate(Xs, V1s, V2s)))
            t0 = t1
        if kind == "exit":
            return float(total * _scale(gas, v))
        if kind == "stall":
            return float(total * _scale(gas, v))
        # wall hit: f(0, V) = damping f(0, RV) + f_b(RV), V = (Pw, L)
        refl += 1
        if fb_at is not None:
            total += weight * math.exp(-expo) * fb_at(-fl.Pw, fl.L)
        weight *= problem.damping
        if weight == 0.0:
            return float(total * _scale(gas, v))
        if refl > k_max:
            raise ConvergenceError(
                f"characteristic from (eta={eta}, v={tuple(v)}) reached {k_max} reflections "
                f"with attenuation {weight * math.exp(-expo):.3e}", [refl])
        X, P, r = 0.0, -fl.Pw, 1.0


def _scale(gas: GasState, v):
    return float(gas.h_scale(np.asarray(v[0], float), np.asarray(v[1], float)))


def _advance_many(fl: _Flow, start, taus):
    X, P, r = start
    taus = np.asarray(taus, float)
    P1 = P + fl.eps2 * fl.c2 * taus
    r1 = np.sqrt(fl.L * fl.L + P1 * P1) / fl.c
    X1 = X - taus * (P + P1) / (r + r1)
    return np.maximum(X1, 0.0), P1, r1


# ---------------------------------------------------------------------------
# fixed-point and continuation solves

def solve_fixed(problem: SlabProblem, op: CollisionOperator, method: str = "krylov",
                tol: float | None = None, max_iter: int = 500, x0: np.ndarray | None = None,
                restart: int = 40, with_diagnostics: bool = True) -> SlabSolution:
    """Fixed point of the Picard update at fixed lambda and n.

    ``krylov`` runs GMRES on the box system preconditioned by the sweep;
    ``picard`` iterates ``mild_sweep`` until the sup-norm update, relative to
    the sup norm of the iterate, is below tol.
    The reported residual is the relative discrete L2 residual of the box
    scheme.
    """
    so = slab_operator(problem, op)
    b = so.rhs()
    history: list = []
    if not np.any(b):
        h = np.zeros(so.shape)
        sol = SlabSolution(problem, h, 0.0, 0, method, history)
        return _finish(sol, with_diagnostics)
    if problem.lam == 0:
        h = so.transport_solve(b)
        sol = SlabSolution(problem, h, relative_residual(so, h), 1, "direct", history)
        return _finish(sol, with_diagnostics)
    if method == "picard":
        tol = 1e-9 if tol is None else tol
        h = np.zeros(so.shape) if x0 is None else np.array(x0, float)
        for it in range(1, max_iter + 1):
            hn = mild_sweep(problem, op, h)
            delta = float(np.max(np.abs(hn - h)) / max(np.max(np.abs(hn)), 1e-300))
            history.append(delta)
            h = hn
            if delta <= tol:
                sol = SlabSolution(problem, h, relative_residual(so, h), it, method, history)
                return _finish(sol, with_diagnostics)
        raise ConvergenceError(f"Picard iteration did not reach {tol} in {max_iter} steps",
                               history)
    if method != "krylov":
        raise DomainError(f"unknown method {method!r}")
    tol = 1e-10 if tol is None else tol
    n = b.size
    shape = so.shape

    def mv(y):
        x = so.sweep(np.reshape(y, shape))
        return (so.apply(x)).ravel()

    A = LinearOperator((n, n), matvec=mv, dtype=float)
    y0 = None if x0 is None else so.apply_P(np.asarray(x0, float)).ravel()

    def cb(res):
        history.append(float(res))

    y, info = gmres(A, b.ravel(), x0=y0, rtol=tol, atol=0.0, restart=restart,
                    maxiter=max(1, max_iter // restart + 1), callback=cb,
                    callback_type="pr_norm")
    h = so.sweep(np.reshape(y, shape))
    res = relative_residual(so, h)
    if info != 0 and res > 10 * tol:
        raise ConvergenceError(
            f"GMRES stopped at relative residual {res:.3e} (target {tol})", history)
    sol = SlabSolution(problem, h, res, len(history), method, history)
    return _finish(sol, with_diagnostics)


def _finish(sol: SlabSolution, with_diagnostics: bool) -> SlabSolution:
    if not with_diagnostics:
        return sol
    return replace(sol, diagnostics=diagnostics(sol))


def continuation_solve(problem: SlabProblem, op: CollisionOperator,
                       n_ramp=(2, 4, 8, 16, 32, 64), lam_step: float = 0.1,
                       min_step: float = 1e-3, tol: float = 1e-10, ramp_tol: float = 1e-7,
                       step_iter: int = 400, grow: float = 2.0,
                       restart: int = 100) -> SlabSolution:
    """Damping ramp at lambda = 0, then a warm-started lambda ramp to the target.

    A lambda step that fails to converge within ``step_iter`` iterations is
    halved; a step below ``min_step`` is an error reporting the lambda reached.
    """
    path = []
    target_n, target_lam = problem.n_damp, problem.lam
    for n in list(n_ramp) + [target_n]:
        if n > target_n:
            continue
        s = solve_fixed(problem.replace(lam=0.0, n_damp=n), op, with_diagnostics=False)
        path.append({"n": float(n), "lam": 0.0, "iterations": s.iterations,
                     "residual": s.residual})
    current = s
    lam = 0.0
    step = lam_step
    while lam < target_lam:
        trial = min(target_lam, lam + step)
        last = trial >= target_lam
        try:
            s = solve_fixed(problem.replace(lam=trial), op, tol=tol if last else ramp_tol,
                            max_iter=step_iter, x0=current.h, restart=restart,
                            with_diagnostics=False)
        except ConvergenceError as exc:
            step *= 0.5
            path.append({"n": float(target_n), "lam": trial, "iterations": len(exc.history),
                         "residual": float("nan"), "rejected": True})
            if step < min_step:
                raise ConvergenceError(
                    f"lambda step underflow below {min_step}; reached lambda = {lam}",
                    path) from exc
            continue
        path.append({"n": float(target_n), "lam": trial, "iterations": s.iterations,
                     "residual": s.residual})
        current, lam = s, trial
        step *= grow
    final = replace(current, path=path)
    return _finish(final, True)


# ---------------------------------------------------------------------------
# bundled scenario

def bump(eta):
    """Compactly supported C^2 profile on [0, 1]."""
    eta = np.asarray(eta, float)
    z = np.clip(eta, 0.0, 1.0)
    return np.where(eta < 1.0, (1 - z) ** 3 * (1 + 3 * z), 0.0)


def bundled_source(gas: GasState, family: str = "bump", amplitude: float = 1.0,
                   sigma0: float = 1.0) -> Callable:
    """S = phi(eta) (A12 + B1/2 + A11/4): no (1, v2, |v|^2) sqrt(mu0) moments."""
    if family == "bump":
        prof = bump
    elif family == "exponential":
        prof = lambda eta: np.exp(-sigma0 * np.asarray(eta, float))
    else:
        raise DomainError(f"unknown source family {family!r}")

    def S(eta, v1, v2):
        B = burnett_fields(gas, v1, v2)
        return amplitude * prof(eta) * (B[1] + 0.5 * B[2] + 0.25 * B[0])

    return S


def bundled_boundary(gas: GasState, amplitude: float = 1.0) -> Callable:
    """Incoming datum v1 (1 - |v|^2/2) sqrt(mu0) exp(-|v|^2/5) on v1 < 0.

    Its flux moments do not vanish; pass the problem through
    ``project_solvable`` before solving.
    """

    def fb(v1, v2):
        q = v1 ** 2 + v2 ** 2
        g = v1 * (1 - 0.5 * q) * gas.sqrt_mu0(v1, v2) * np.exp(-0.2 * q)
        return np.where(v1 < 0, amplitude * g, 0.0)

    return fb


def bundled_problem(geom: SlabGeometry, gas: GasState, grid: VelocityGrid,
                    n_eta: int = 200, family: str = "bump", amplitude: float = 1.0,
                    lam: float = 1.0, n_damp: float = math.inf, sigma0: float = 1.0,
                    boundary: str = "none", eta_ratio: float = 1.08) -> SlabProblem:
    """Bundled source family with optional boundary datum ('none' or 'odd_flux').

    ``family='zero'`` gives S = 0, useful with a boundary datum.
    """
    eta = make_eta_grid(geom.d, n_eta, eta_ratio)
    src = None if family == "zero" else bundled_source(gas, family, amplitude, sigma0)
    if boundary == "none":
        fb = None
    elif boundary == "odd_flux":
        fb = bundled_boundary(gas, amplitude)
    else:
        raise DomainError(f"unknown boundary family {boundary!r}")
    pr = SlabProblem.from_functions(geom, gas, grid, eta, source_fn=src, boundary_fn=fb,
                                    lam=lam, n_damp=n_damp)
    return project_solvable(pr) if fb is not None else pr


def source_weighted_norm(problem: SlabProblem, op: CollisionOperator) -> float:
    """|| nu^-1 w (sqrt(mu0)/sqrt(mu_M)) S ||_inf."""
    return float(np.max(np.abs(problem.h_scale * problem.source / op.nu)))
