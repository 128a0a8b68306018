"""Hard-sphere linearized collision operator on a 2D velocity grid.

The operator is L0 f = nu f - K f around the local Maxwellian

    mu0(v) = rho0 / (2 pi T0) exp(-|v - ubar|^2 / (2 T0)),  ubar = (0, u_tau0),

with the hard-sphere cross-section B = |(v - u) . omega| on the unit circle.
The angular measure is normalized so that the collision frequency is
nu(v) = int |v - u| mu0(u) du.

The kernel of K is evaluated in closed form (the circle integral of the gain
term reduces to Gaussian integrals along the line through v and u), and the
integral operator is discretized by a Nystrom rule with subtraction of the
1/|v - u| singularity on the diagonal.  The resulting matrix is exactly
symmetric.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg, eigsh
from scipy.special import erf, i0e, i1e

from .errors import GridError, InvariantError, NotSolvableError

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class GasState:
    """Boundary fluid state and the reference Maxwellian parameters."""

    rho0: float = 1.0
    u_tau0: float = 0.0
    T0: float = 1.0
    T_M: float = 0.75
    zeta: float = 1.0 / 6.0
    beta: float = 4.0

    def __post_init__(self):
        problems = []
        if not self.rho0 > 0:
            problems.append(f"rho0 must be positive, got {self.rho0}")
        if not (0 < self.T_M < self.T0 < 2 * self.T_M):
            problems.append(
                f"need 0 < T_M < T0 < 2 T_M, got T_M={self.T_M}, T0={self.T0}")
        if not (0 < self.zeta < 1.0 / (4 * self.T_M)):
            problems.append(
                f"need 0 < zeta < 1/(4 T_M) = {1 / (4 * self.T_M)}, got {self.zeta}")
        if not self.beta > 3:
            problems.append(f"beta must exceed 3, got {self.beta}")
        if not np.isfinite(self.u_tau0):
            problems.append("u_tau0 must be finite")
        if problems:
            raise InvariantError("; ".join(problems))

    @property
    def default_vmax(self) -> float:
        return 8.0 * max(np.sqrt(self.T_M), np.sqrt(self.T0)) + abs(self.u_tau0)

    def mu0(self, v1, v2):
        q = v1 ** 2 + (v2 - self.u_tau0) ** 2
        return self.rho0 / (2 * np.pi * self.T0) * np.exp(-q / (2 * self.T0))

    def sqrt_mu0(self, v1, v2):
        q = v1 ** 2 + (v2 - self.u_tau0) ** 2
        return np.sqrt(self.rho0 / (2 * np.pi * self.T0)) * np.exp(-q / (4 * self.T0))

    def sqrt_mu_M(self, v1, v2):
        q = v1 ** 2 + v2 ** 2
        return np.sqrt(1.0 / (2 * np.pi * self.T_M)) * np.exp(-q / (4 * self.T_M))

    def weight(self, v1, v2, beta=None, zeta=None):
        """w(v) = (1 + |v|^2)^(beta/2) exp(zeta |v|^2)."""
        beta = self.beta if beta is None else beta
        zeta = self.zeta if zeta is None else zeta
        q = v1 ** 2 + v2 ** 2
        return (1 + q) ** (beta / 2) * np.exp(zeta * q)

    def h_scale(self, v1, v2):
        """Factor turning f into h = w sqrt(mu0)/sqrt(mu_M) f.

        Evaluated through a single exponent so corner values never overflow
        or lose precision.
        """
        q = v1 ** 2 + v2 ** 2
        qa = v1 ** 2 + (v2 - self.u_tau0) ** 2
        logc = 0.5 * np.log(self.rho0 * self.T_M / self.T0)
        expo = (self.zeta * q - qa / (4 * self.T0) + q / (4 * self.T_M)
                + 0.5 * self.beta * np.log1p(q) + logc)
        return np.exp(expo)


@dataclass(frozen=True, eq=False)
class VelocityGrid:
    """Cell-centred tensor grid on [-v_max, v_max]^2.

    Node index is ``i * n + j`` with ``v1 = axis[i]`` and ``v2 = axis[j]``.
    An even number of cells keeps v1 = 0 off the grid.
    """

    n_per_axis: int
    v_max: float
    axis: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def uniform(cls, n_per_axis: int, v_max: float) -> "VelocityGrid":
        n = int(n_per_axis)
        if n < 4 or n % 2:
            raise GridError(f"n_per_axis must be an even integer >= 4, got {n_per_axis}")
        if not v_max > 0:
            raise GridError("v_max must be positive")
        h = 2.0 * v_max / n
        axis = -v_max + (np.arange(n) + 0.5) * h
        V1, V2 = np.meshgrid(axis, axis, indexing="ij")
        nodes = np.column_stack([V1.ravel(), V2.ravel()])
        weights = np.full(n * n, h * h)
        for a in (axis, nodes, weights):
            a.setflags(write=False)
        return cls(n, float(v_max), axis, nodes, weights)

    @property
    def h(self) -> float:
        return 2.0 * self.v_max / self.n_per_axis

    @property
    def size(self) -> int:
        return self.n_per_axis ** 2

    @property
    def v1(self) -> np.ndarray:
        return self.nodes[:, 0]

    @property
    def v2(self) -> np.ndarray:
        return self.nodes[:, 1]

    @property
    def mirror_index(self) -> np.ndarray:
        """Index of Rv = (-v1, v2) for every node."""
        n = self.n_per_axis
        i, j = np.divmod(np.arange(n * n), n)
        return (n - 1 - i) * n + j

    def inner(self, f, g):
        """Quadrature inner product over the last axis."""
        return np.sum(self.weights * f * g, axis=-1)

    def norm(self, f):
        return np.sqrt(self.inner(f, f))


def build_maxwellian(gas: GasState, grid: VelocityGrid, tol: float = 1e-8) -> np.ndarray:
    """Local Maxwellian mu0 on the grid, with its moments validated."""
    need = 6 * np.sqrt(gas.T_M) + abs(gas.u_tau0)
    if grid.v_max < need:
        raise GridError(f"v_max={grid.v_max} is below 6 sqrt(T_M) + |u_tau0| = {need}")
    v1, v2 = grid.v1, grid.v2
    mu = gas.mu0(v1, v2)
    w = grid.weights
    mass = np.sum(w * mu)
    m1 = np.sum(w * v1 * mu)
    m2 = np.sum(w * v2 * mu)
    en = np.sum(w * (v1 ** 2 + (v2 - gas.u_tau0) ** 2) * mu)
    defects = {
        "mass": abs(mass - gas.rho0) / gas.rho0,
        "momentum_n": abs(m1) / gas.rho0,
        "momentum_tau": abs(m2 - gas.rho0 * gas.u_tau0) / gas.rho0,
        "energy": abs(en - 2 * gas.rho0 * gas.T0) / (2 * gas.rho0 * gas.T0),
    }
    bad = {k: d for k, d in defects.items() if not d <= tol}
    if bad:
        raise GridError(f"Maxwellian moment defects above {tol}: {bad}")
    return mu


def collision_frequency(gas: GasState, v1, v2):
    """nu(v) = int |v - u| mu0(u) du, evaluated exactly.

    With z = |v - ubar|^2 / (4 T0) the integral is
    rho0 sqrt(pi T0 / 2) [(1 + 2z) I0e(z) + 2z I1e(z)].
    """
    z = (np.asarray(v1) ** 2 + (np.asarray(v2) - gas.u_tau0) ** 2) / (4 * gas.T0)
    return gas.rho0 * np.sqrt(np.pi * gas.T0 / 2) * ((1 + 2 * z) * i0e(z) + 2 * z * i1e(z))


def compute_nu(gas: GasState, grid: VelocityGrid) -> np.ndarray:
    nu = collision_frequency(gas, grid.v1, grid.v2)
    ratio = nu / (1 + np.hypot(grid.v1, grid.v2))
    if not (np.all(np.isfinite(nu)) and ratio.min() > 0):
        raise GridError("collision frequency is not positive on the grid")
    return nu


def nu_on_grid(gas: GasState, grid: VelocityGrid) -> np.ndarray:
    """Grid quadrature of int |v - u| mu0(u) du, used as a cross-check."""
    mu = gas.mu0(grid.v1, grid.v2) * grid.weights
    out = np.empty(grid.size)
    for s in range(0, grid.size, 512):
        sl = slice(s, s + 512)
        d = np.hypot(grid.v1[sl, None] - grid.v1[None, :], grid.v2[sl, None] - grid.v2[None, :])
        out[sl] = d @ mu
    return out


def _m_of_p(p, T):
    # E|p + sqrt(T) Z| for a standard normal Z
    return np.sqrt(2 * T / np.pi) * np.exp(-p ** 2 / (2 * T)) + p * erf(p / np.sqrt(2 * T))


def kernel_parts(gas: GasState, v1, v2, w1, w2):
    """Gain and loss parts of the kernel of K at (v, w), w != v.

    Returns ``(gain, loss)`` with k = gain - loss.  Both are nonnegative.
    """
    T, rho, u = gas.T0, gas.rho0, gas.u_tau0
    a1, a2 = v1, v2 - u
    b1, b2 = w1, w2 - u
    y1, y2 = b1 - a1, b2 - a2
    r = np.hypot(y1, y2)
    r = np.where(r == 0, np.inf, r)
    e1, e2 = y1 / r, y2 / r
    qa = a1 * e1 + a2 * e2
    qb = b1 * e1 + b2 * e2
    p = np.abs(a2 * e1 - a1 * e2)
    gain = rho / (2 * np.sqrt(2 * np.pi * T)) * np.exp(-(qa ** 2 + qb ** 2) / (4 * T)) \
        * (1 + _m_of_p(p, T) / r)
    loss = r * gas.sqrt_mu0(v1, v2) * gas.sqrt_mu0(w1, w2)
    return gain, loss


def kernel(gas: GasState, v1, v2, w1, w2):
    gain, loss = kernel_parts(gas, v1, v2, w1, w2)
    return gain - loss


def _hydro_functions(gas: GasState, grid: VelocityGrid) -> np.ndarray:
    """Unnormalized collision invariants (1, v1, v2 - u, |v - ubar|^2 - 2T) sqrt(mu0)."""
    v1, v2 = grid.v1, grid.v2
    s = gas.sqrt_mu0(v1, v2)
    w2 = v2 - gas.u_tau0
    return np.vstack([s, v1 * s, w2 * s, (v1 ** 2 + w2 ** 2 - 2 * gas.T0) * s])


def _diagonal_singular_model(gas, grid, rows, n_omega, sigma):
    """Exact box integral of the subtracted singular model for the given rows.

    The model is C exp(-qa^2/2T) (m(p)/r + 1) exp(-r^2 / 2 sigma^2) in polar
    coordinates around v; its radial integrals are elementary.
    """
    T = gas.T0
    C = gas.rho0 / (2 * np.sqrt(2 * np.pi * T))
    th = (np.arange(n_omega) + 0.5) * 2 * np.pi / n_omega
    c, s = np.cos(th)[None, :], np.sin(th)[None, :]
    x1 = grid.v1[rows, None]
    x2 = grid.v2[rows, None]
    a1, a2 = x1, x2 - gas.u_tau0
    qa = a1 * c + a2 * s
    p = np.abs(a2 * c - a1 * s)
    ph0 = C * np.exp(-qa ** 2 / (2 * T))
    ph = ph0 * _m_of_p(p, T)
    vm = grid.v_max
    with np.errstate(divide="ignore"):
        t1 = np.where(c > 0, (vm - x1) / c, np.where(c < 0, (-vm - x1) / c, np.inf))
        t2 = np.where(s > 0, (vm - x2) / s, np.where(s < 0, (-vm - x2) / s, np.inf))
    rb = np.minimum(t1, t2)
    radial = sigma * np.sqrt(np.pi / 2) * erf(rb / (sigma * SQRT2))
    second = sigma ** 2 * (-np.expm1(-rb ** 2 / (2 * sigma ** 2)))
    return np.sum(ph * radial + ph0 * second, axis=1) * 2 * np.pi / n_omega


def assemble_kernel_matrix(gas: GasState, grid: VelocityGrid, n_omega: int = 64,
                           sigma: float | None = None, block: int | None = None) -> np.ndarray:
    """Dense Nystrom matrix of K on the grid (symmetric by construction)."""
    N = grid.size
    h2 = grid.h ** 2
    T = gas.T0
    sigma = 0.75 * np.sqrt(T) if sigma is None else sigma
    C = gas.rho0 / (2 * np.sqrt(2 * np.pi * T))
    if block is None:
        block = max(32, int(2.5e6 // N))
    v1, v2 = grid.v1, grid.v2
    K = np.empty((N, N))
    for start in range(0, N, block):
        rows = np.arange(start, min(N, start + block))
        loc = np.arange(rows.size)
        x1 = v1[rows, None]
        x2 = v2[rows, None]
        gain, loss = kernel_parts(gas, x1, x2, v1[None, :], v2[None, :])
        blk = gain - loss
        # singular model evaluated at the off-diagonal nodes
        y1 = v1[None, :] - x1
        y2 = v2[None, :] - x2
        r = np.hypot(y1, y2)
        r[loc, rows] = 1.0
        a1, a2 = x1, x2 - gas.u_tau0
        qa = (a1 * y1 + a2 * y2) / r
        p = np.abs(a2 * y1 - a1 * y2) / r
        model = C * np.exp(-qa ** 2 / (2 * T)) * (_m_of_p(p, T) / r + 1) \
            * np.exp(-r ** 2 / (2 * sigma ** 2))
        model[loc, rows] = 0.0
        blk[loc, rows] = 0.0
        exact = _diagonal_singular_model(gas, grid, rows, n_omega, sigma)
        diag_gain = exact - h2 * model.sum(axis=1)
        blk *= h2
        blk[loc, rows] = diag_gain
        K[rows] = blk
    return K


@dataclass(frozen=True, eq=False)
class CollisionOperator:
    """Discrete L0 = nu - K with its null-space machinery.

    ``k_matrix`` holds the Nystrom matrix; ``(K f)[i] = sum_j k_matrix[i, j] f[j]``.
    When ``conservative`` is true, L0 is applied as P L_raw P with P the
    orthogonal projection onto the complement of the collision invariants,
    which makes the null space exact while keeping symmetry.  The raw
    residuals of the invariants are kept in ``raw_null_residual``.
    """

    gas: GasState
    grid: VelocityGrid
    nu: np.ndarray
    k_matrix: np.ndarray
    p0_basis: np.ndarray
    raw_null_residual: np.ndarray
    symmetry_defect: float
    clipped_mass: float = 0.0
    conservative: bool = True
    n_omega: int = 64

    @property
    def sqrt_mu0(self) -> np.ndarray:
        return self.gas.sqrt_mu0(self.grid.v1, self.grid.v2)

    @property
    def m_scale(self) -> np.ndarray:
        """sqrt(mu0)/sqrt(mu_M) at the nodes."""
        g = self.gas
        return self.sqrt_mu0 / g.sqrt_mu_M(self.grid.v1, self.grid.v2)

    @property
    def k_m_matrix(self) -> np.ndarray:
        """Dense matrix of K_M = diag(m) K diag(1/m), m = sqrt(mu0)/sqrt(mu_M).

        Built on demand; it has the same footprint as ``k_matrix``.
        """
        m = self.m_scale
        return m[:, None] * self.k_matrix / m[None, :]

    def _perp(self, f):
        # f has the velocity index last
        Q = self.p0_basis
        c = (f * self.grid.weights) @ Q.T
        return f - c @ Q

    def apply_L(self, f):
        """L0 f for f of shape (N,) or (..., N)."""
        f = np.asarray(f, dtype=float)
        if self.conservative:
            g = self._perp(f)
            return self._perp(self.nu * g - g @ self.k_matrix.T)
        return self.nu * f - f @ self.k_matrix.T

    def apply_K(self, f):
        f = np.asarray(f, dtype=float)
        return self.nu * f - self.apply_L(f)

    def perturbed(self, noise: float, seed: int = 0) -> "CollisionOperator":
        """Copy with asymmetric relative noise added to the kernel matrix."""
        rng = np.random.default_rng(seed)
        scale = noise * np.abs(self.k_matrix).max()
        K = self.k_matrix + scale * rng.uniform(-1, 1, self.k_matrix.shape)
        return dataclasses.replace(self, k_matrix=K,
                                   symmetry_defect=relative_asymmetry(K))


def relative_asymmetry(K: np.ndarray) -> float:
    num = 0.0
    n = K.shape[0]
    for s in range(0, n, 1024):
        num += np.sum((K[s:s + 1024] - K[:, s:s + 1024].T) ** 2)
    return float(np.sqrt(num) / np.linalg.norm(K))


def orthonormal_null_basis(gas: GasState, grid: VelocityGrid) -> np.ndarray:
    """Rows orthonormal in the grid inner product spanning the invariants."""
    chi = _hydro_functions(gas, grid)
    sw = np.sqrt(grid.weights)
    q, _ = np.linalg.qr((chi * sw).T)
    return (q / sw[:, None]).T


def assemble_kernel(gas: GasState, grid: VelocityGrid, n_omega: int = 64,
                    sigma: float | None = None, conservative: bool = True) -> CollisionOperator:
    build_maxwellian(gas, grid)
    nu = compute_nu(gas, grid)
    K = assemble_kernel_matrix(gas, grid, n_omega=n_omega, sigma=sigma)
    basis = orthonormal_null_basis(gas, grid)
    chi = _hydro_functions(gas, grid)
    res = nu * chi - chi @ K.T
    raw = grid.norm(res) / grid.norm(chi)
    for a in (nu, K, basis, raw):
        a.setflags(write=False)
    return CollisionOperator(gas=gas, grid=grid, nu=nu, k_matrix=K, p0_basis=basis,
                             raw_null_residual=raw, symmetry_defect=relative_asymmetry(K),
                             conservative=conservative, n_omega=n_omega)


class Projection(NamedTuple):
    field: np.ndarray
    a: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    c: np.ndarray


def project_P0(op: CollisionOperator, f) -> Projection:
    """Orthogonal projection onto the null space, with its coefficients.

    P0 f = a sqrt(mu0) + b1 v1 sqrt(mu0) + b2 (v2 - u) sqrt(mu0)
           + c (|v - ubar|^2 - 2 T0) sqrt(mu0).
    Accepts a single field or a stack of fields along the first axis.
    """
    f = np.asarray(f, dtype=float)
    chi = _hydro_functions(op.gas, op.grid)
    w = op.grid.weights
    gram = (chi * w) @ chi.T
    rhs = (f * w) @ chi.T
    coef = np.linalg.solve(gram, rhs.T).T
    pf = coef @ chi
    return Projection(pf, coef[..., 0], coef[..., 1], coef[..., 2], coef[..., 3])


def invert_L0_on_complement(op: CollisionOperator, g, tol: float = 1e-10,
                            solvability_tol: float = 1e-8, maxiter: int = 2000) -> np.ndarray:
    """Pseudo-inverse of L0 on the complement of its null space.

    Conjugate gradients on the projected system, with the projection
    reapplied inside every operator and preconditioner call.
    """
    g = np.asarray(g, dtype=float)
    grid = op.grid
    gnorm = grid.norm(g)
    if gnorm == 0:
        return np.zeros_like(g)
    proj = project_P0(op, g)
    ratio = grid.norm(proj.field) / gnorm
    if ratio > solvability_tol:
        moments = {"a": float(proj.a), "b1": float(proj.b1), "b2": float(proj.b2),
                   "c": float(proj.c), "mass_moment": float(grid.inner(g, op.sqrt_mu0)),
                   "relative_null_component": float(ratio)}
        raise NotSolvableError(
            f"input has null-space component {ratio:.3e} > {solvability_tol}", moments)
    # The grid weights are uniform, so the plain Euclidean product is the
    # quadrature product up to a constant.
    rhs = op._perp(g)
    N = grid.size
    A = LinearOperator((N, N), matvec=lambda x: op._perp(op.apply_L(np.ravel(x))), dtype=float)
    inv_nu = 1.0 / op.nu
    M = LinearOperator((N, N), matvec=lambda x: op._perp(inv_nu * op._perp(np.ravel(x))), dtype=float)
    x, info = cg(A, rhs, rtol=tol, atol=0.0, M=M, maxiter=maxiter)
    if info != 0:
        raise NotSolvableError(f"conjugate gradients did not converge (info={info})")
    return op._perp(x)


def spectral_gap(op: CollisionOperator, k: int = 1) -> float:
    """Smallest c0 with <g, L0 g> >= c0 ||g||_nu^2 for g orthogonal to the invariants."""
    N = op.grid.size
    Q = op.p0_basis * op.grid.h          # Euclidean orthonormal rows
    s = 1.0 / np.sqrt(op.nu)
    Z, _ = np.linalg.qr((Q * s).T)

    def mv(y):
        y = np.ravel(y)
        y = y - Z @ (Z.T @ y)
        out = s * op.apply_L(s * y)
        out = out - Z @ (Z.T @ out)
        return out + 10.0 * (Z @ (Z.T @ y))

    A = LinearOperator((N, N), matvec=mv, dtype=float)
    vals = eigsh(A, k=k, which="SA", tol=1e-8, return_eigenvectors=False,
                 v0=np.ones(N))
    return float(np.min(vals))


def self_adjointness_defect(op: CollisionOperator, n_samples: int = 8, seed: int = 0) -> float:
    """max |<f, L g> - <L f, g>| / (||f|| ||L g|| + ||L f|| ||g||) over random pairs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    grid = op.grid
    for _ in range(n_samples):
        f = rng.standard_normal(grid.size) * op.sqrt_mu0 ** 0.5
        g = rng.standard_normal(grid.size) * op.sqrt_mu0 ** 0.5
        Lf, Lg = op.apply_L(f), op.apply_L(g)
        num = abs(grid.inner(f, Lg) - grid.inner(Lf, g))
        den = grid.norm(f) * grid.norm(Lg) + grid.norm(Lf) * grid.norm(g)
        worst = max(worst, num / den)
    return float(worst)


@dataclass
class KernelBoundReport:
    speeds: np.ndarray
    directions: np.ndarray
    integrals: np.ndarray
    ratios: np.ndarray
    fitted_C: float
    median_ratio: float
    violations: list
    beta: float
    zeta: float

    @property
    def passed(self) -> bool:
        return not self.violations


def _weighted_kernel_integral(gas, v, beta, zeta, radius, n_r=160, n_theta=256):
    """int |k_M(v, u)| (1 + |u|^2)^(beta/2) exp(zeta |u|^2) du in polar form around v.

    |k_M| is bounded by the sum of the scaled gain and loss parts, which is
    what is integrated here.
    """
    x, wx = np.polynomial.legendre.leggauss(n_r // 4)
    edges = np.array([0.0, 0.5, 2.0, 6.0, radius])
    rs, wr = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        rs.append(lo + (x + 1) * (hi - lo) / 2)
        wr.append(wx * (hi - lo) / 2)
    rr = np.concatenate(rs)
    wr = np.concatenate(wr)
    th = (np.arange(n_theta) + 0.5) * 2 * np.pi / n_theta
    R, TH = np.meshgrid(rr, th, indexing="ij")
    u1 = v[0] + R * np.cos(TH)
    u2 = v[1] + R * np.sin(TH)
    gain, loss = kernel_parts(gas, np.full_like(u1, v[0]), np.full_like(u1, v[1]), u1, u2)
    T0, TM, ub = gas.T0, gas.T_M, gas.u_tau0
    qv = v[0] ** 2 + (v[1] - ub) ** 2
    qu = u1 ** 2 + (u2 - ub) ** 2
    pu = u1 ** 2 + u2 ** 2
    pv = v[0] ** 2 + v[1] ** 2
    log_scale = (qu - qv) / (4 * T0) + (pv - pu) / (4 * TM)
    logw = 0.5 * beta * np.log1p(pu) + zeta * pu
    integrand = (gain + loss) * np.exp(log_scale + logw) * R
    return float(np.sum(integrand * wr[:, None]) * 2 * np.pi / n_theta)


def check_weighted_kernel_bound(op: CollisionOperator | GasState, beta: float, zeta: float,
                                speeds=None, n_directions: int = 4,
                                spread: float = 3.0) -> KernelBoundReport:
    """Sample I(v) and its ratio to (1 + |v|^2)^((beta-1)/2) exp(zeta |v|^2).

    A sample is flagged when its ratio is non-finite or more than ``spread``
    times the median ratio.
    """
    gas = op.gas if isinstance(op, CollisionOperator) else op
    if beta < 0:
        raise InvariantError("beta must be nonnegative")
    if not zeta < 1 / (4 * gas.T_M):
        raise InvariantError("zeta must be below 1/(4 T_M)")
    speeds = np.linspace(0.0, 8.0, 17) if speeds is None else np.asarray(speeds, float)
    angles = (np.arange(n_directions) + 0.5) * 2 * np.pi / n_directions
    # Gaussian decay of the integrand has rate 1/(4 T_M) - zeta along every ray.
    decay = 1 / (4 * gas.T_M) - zeta
    radius = np.sqrt(40.0 / decay) + 2.0
    S, A = np.meshgrid(speeds, angles, indexing="ij")
    S, A = S.ravel(), A.ravel()
    dirs = np.column_stack([np.cos(A), np.sin(A)])
    vals = np.empty(S.size)
    for i, (sp, d) in enumerate(zip(S, dirs)):
        vals[i] = _weighted_kernel_integral(gas, sp * d, beta, zeta, radius)
    q = S ** 2
    ratios = vals / ((1 + q) ** ((beta - 1) / 2) * np.exp(zeta * q))
    med = float(np.median(ratios))
    viol = [(float(S[i]), float(A[i]), float(ratios[i])) for i in range(S.size)
            if not np.isfinite(ratios[i]) or ratios[i] > spread * med or vals[i] <= 0]
    return KernelBoundReport(S, dirs, vals, ratios, float(np.max(ratios)), med, viol, beta, zeta)
