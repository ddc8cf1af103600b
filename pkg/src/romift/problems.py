"""Benchmark definitions: 1D analytic demo functions, 2D advection-reaction,
quasi-1D nozzle flow and the stagnation-pressure relation."""

from __future__ import annotations

import logging
import math

import jax.numpy as jnp
import numpy as np

from .fe import Mesh, build_structured_mesh
from .hdm import ConservationLaw, HdmSolveError
from .mapping import (BoundaryConstraintMap, DomainMapping, FullMappingSpace, MappingFamily,
                      box_planes, build_boundary_constraint)

log = logging.getLogger(__name__)


# 1D analytic demos ============================================================
def cutoff_gaussian(x, params):
    """a exp(-((x - c)/b)^2) for x <= c, zero for x > c."""
    a, b, c = (float(v) for v in params)
    if b == 0.0:
        raise ValueError("cutoff Gaussian width b must be nonzero")
    x = np.asarray(x, dtype=float)
    return np.where(x <= c, a * np.exp(-(((x - c) / b) ** 2)), 0.0)


def quad_bijection(X, tau, strict: bool = False):
    """H_tau(X) = X + tau (1 - X^2).

    Monotone on [-1, 1] only for |tau| <= 1/2; ``strict`` enforces that range.
    """
    if strict and abs(tau) >= 0.5:
        raise ValueError(f"|tau| = {abs(tau)} outside the monotone range |tau| < 1/2")
    X = np.asarray(X, dtype=float)
    return X + tau * (1.0 - X * X)


def quad_bijection_inverse(x, tau):
    """Inverse of H_tau on [-1, 1] for |tau| < 1/2."""
    if abs(tau) >= 0.5:
        raise ValueError(f"|tau| = {abs(tau)} outside the monotone range |tau| < 1/2")
    x = np.asarray(x, dtype=float)
    if tau == 0.0:
        return x.copy()
    # tau X^2 - X + (x - tau) = 0, root inside [-1, 1]; stable form
    disc = np.sqrt(np.maximum(1.0 - 4.0 * tau * (x - tau), 0.0))
    return 2.0 * (tau - x) / (-1.0 - disc)


def steepening_gaussian(x, mu):
    """Wide Gaussian left of mu plus a steep one right of it, peak value at
    x = mu counted once (left branch)."""
    a = 0.2 * mu ** -0.5
    x = np.asarray(x, dtype=float)
    right = np.where(x > mu, cutoff_gaussian(-x, (a, 0.004 * mu ** -2, -mu)), 0.0)
    return cutoff_gaussian(x, (a, 0.1, mu)) + right


def steepening_map(X, tau):
    """L_tau(X) = X + 4 (tau - 1/2) X (1 - X); fixes 0 and 1, sends 1/2 to tau."""
    X = np.asarray(X, dtype=float)
    return X + 4.0 * (tau - 0.5) * X * (1.0 - X)


# Advection-reaction ===========================================================
ADVEC_BOUNDS = ((-math.pi / 10, math.pi / 10), (0.3, 0.7), (60.0, 100.0))


def advec_react_data(mu):
    """Data functions (beta, tau, h, ubar, inflow) for mu = (theta, b, s)."""
    theta, b, s = (float(v) for v in mu)
    beta = np.array([math.cos(theta), math.sin(theta)])

    def tau(x):
        x = np.asarray(x, dtype=float)
        return 1.0 + b * np.exp(x[..., 0] + x[..., 1])

    def h(x):
        x = np.asarray(x, dtype=float)
        return 1.0 + x[..., 0] * x[..., 1]

    def ubar(x):
        x2 = np.asarray(x, dtype=float)[..., 1]
        return 4.0 * np.arctan(s * (x2 - 0.5)) * (x2 - x2 * x2)

    def inflow(normal):
        return float(np.dot(beta, normal)) < 0.0

    return beta, tau, h, ubar, inflow


class AdvectionReaction(ConservationLaw):
    """div(beta u) + tau u = h with upwind flux; the exterior state on every
    boundary face is ubar, so upwinding imposes it exactly on inflow faces."""

    m, dim = 1, 2
    param_names = ("theta", "b", "s")
    param_bounds = ADVEC_BOUNDS

    @staticmethod
    def _beta(mu):
        return jnp.array([jnp.cos(mu[0]), jnp.sin(mu[0])])

    def flux(self, u, x, mu):
        return u[:, None] * self._beta(mu)[None, :]

    def source(self, u, x, mu):
        tau = 1.0 + mu[1] * jnp.exp(x[0] + x[1])
        return (1.0 + x[0] * x[1]) - tau * u

    def numerical_flux(self, ul, ur, n, x, mu):
        bn = self._beta(mu) @ n
        return jnp.maximum(bn, 0.0) * ul + jnp.minimum(bn, 0.0) * ur

    def element_order(self, centroids, mu):
        # upwind coupling with constant beta is acyclic: sweep along beta
        th = float(np.atleast_1d(mu)[0])
        return np.argsort(centroids @ np.array([math.cos(th), math.sin(th)]), kind="stable")

    def boundary_state(self, u, x, n, surface, mu):
        x2 = x[1]
        return (4.0 * jnp.arctan(mu[2] * (x2 - 0.5)) * (x2 - x2 * x2))[None]


def advec_mesh(n: int = 34) -> Mesh:
    """n x n squares on [0,1]^2, each split into two triangles."""
    return build_structured_mesh([0.0, 0.0], [1.0, 1.0], n)


def advec_slice(n: int) -> np.ndarray:
    """n uniformly spaced parameters (theta, 0.55, 80), theta in [-pi/10, pi/10]."""
    if n < 1:
        raise ValueError("need at least one sample")
    th = np.array([0.0]) if n == 1 else -math.pi / 10 + np.arange(n) / (n - 1) * math.pi / 5
    return np.column_stack([th, np.full(n, 0.55), np.full(n, 80.0)])


def centroid_first(params) -> np.ndarray:
    """Reorder so the sample nearest the centroid comes first, followed by
    the rest in order of increasing distance from it (ties: smaller index)."""
    P = np.atleast_2d(np.asarray(params, dtype=float))
    lo, hi = P.min(axis=0), P.max(axis=0)
    scale = np.where(hi > lo, hi - lo, 1.0)
    dist = np.linalg.norm((P - 0.5 * (lo + hi)) / scale, axis=1)
    order = sorted(range(len(P)), key=lambda i: (round(dist[i], 12), i))
    return P[order]


def onepar_displacement(X) -> np.ndarray:
    """d G / d c of the one-parameter mapping (G is affine in c)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    D = np.zeros_like(X)
    lower = X[:, 1] < 0.5
    D[:, 1] = np.where(lower, 2.0 * X[:, 0] * X[:, 1], 2.0 * X[:, 0] * (1.0 - X[:, 1]))
    return D


def onepar_mapping(mesh: Mesh, c: float) -> DomainMapping:
    """Nodal interpolant of G1 = X1, G2 = X2 + 2cX1X2 (X2 < 1/2) or
    X2 + 2cX1(1 - X2) (X2 >= 1/2)."""
    mapping = DomainMapping(mesh, (mesh.nodes + c * onepar_displacement(mesh.nodes)).ravel())
    if not mapping.is_invertible():
        raise ValueError(f"one-parameter mapping with c = {c} is not invertible")
    return mapping


def onepar_family(mesh: Mesh) -> MappingFamily:
    return MappingFamily(mesh, mesh.nodes.ravel(), onepar_displacement(mesh.nodes).reshape(-1, 1))


# Quasi-1D nozzle ==============================================================
NOZZLE_L, NOZZLE_GAMMA = 10.0, 1.4
NOZZLE_BOUNDS = ((0.5, 1.625),)
INLET_RHO, INLET_P, OUTLET_P = 1.0, 1.0, 0.7


def nozzle_area(x, mu, L: float = NOZZLE_L):
    return 3.0 + 4.0 * (mu - 3.0) * (x / L) * (1.0 - x / L)


def nozzle_area_dx(x, mu, L: float = NOZZLE_L):
    return 4.0 * (mu - 3.0) * (1.0 - 2.0 * x / L) / L


def nozzle_primitives(u, A, gamma: float = NOZZLE_GAMMA):
    """(rho, v, E, P) from u = (A rho, A rho v, A rho E)."""
    u = np.asarray(u, dtype=float)
    rho = u[..., 0] / A
    v = u[..., 1] / u[..., 0]
    E = u[..., 2] / u[..., 0]
    P = (gamma - 1.0) * (rho * E - 0.5 * rho * v * v)
    return rho, v, E, P


def _roe_flux(ql, qr, n, gamma):
    """Roe flux for 1D Euler per unit area with a smooth entropy fix."""
    nn = jnp.abs(n)
    sn = n / nn

    def phys(q):
        rho, mom, ener = q[0], q[1], q[2]
        v = mom / rho
        P = (gamma - 1.0) * (ener - 0.5 * mom * v)
        H = (ener + P) / rho
        return rho, v, P, H, jnp.array([mom, mom * v + P, v * (ener + P)])

    rl, vl, pl, hl, fl = phys(ql)
    rr, vr, pr, hr, fr = phys(qr)
    sl, sr = jnp.sqrt(rl), jnp.sqrt(rr)
    v = (sl * vl + sr * vr) / (sl + sr)
    H = (sl * hl + sr * hr) / (sl + sr)
    c = jnp.sqrt(jnp.maximum((gamma - 1.0) * (H - 0.5 * v * v), 1e-14))
    vn = v * sn
    lam = jnp.array([vn - c, vn, vn + c])
    delta = 0.05 * (jnp.abs(vn) + c)
    alam = jnp.where(jnp.abs(lam) < delta, (lam * lam + delta * delta) / (2.0 * delta), jnp.abs(lam))
    # wave strengths
    dp = pr - pl
    dv = vr - vl
    drho = rr - rl
    rho = sl * sr
    a1 = (dp - rho * c * dv * sn) / (2.0 * c * c)
    a2 = drho - dp / (c * c)
    a3 = (dp + rho * c * dv * sn) / (2.0 * c * c)
    r1 = jnp.array([1.0, v - c * sn, H - vn * c])
    r2 = jnp.array([1.0, v, 0.5 * v * v])
    r3 = jnp.array([1.0, v + c * sn, H + vn * c])
    diss = alam[0] * a1 * r1 + alam[1] * a2 * r2 + alam[2] * a3 * r3
    return nn * (0.5 * (fl + fr) * sn - 0.5 * diss)


class NozzleFlow(ConservationLaw):
    """Quasi-1D Euler equations in u = (A rho, A rho v, A rho E).

    ``av_scale > 0`` enables elementwise artificial viscosity driven by a
    modal-decay sensor on the density.
    """

    m, dim = 3, 1
    param_names = ("mu",)
    param_bounds = NOZZLE_BOUNDS

    def __init__(self, av_scale: float = 0.0, sensor_s0: float = -3.0, sensor_width: float = 1.0,
                 L: float = NOZZLE_L, gamma: float = NOZZLE_GAMMA):
        self.L, self.gamma = L, gamma
        self.av_scale, self.s0, self.kappa = av_scale, sensor_s0, sensor_width
        self.artificial_viscosity = self._artificial_viscosity if av_scale > 0.0 else None

    def area(self, x, mu):
        return nozzle_area(x[0], mu[0], self.L)

    def _q(self, u, x, mu):
        return u / self.area(x, mu)

    def pressure(self, q):
        return (self.gamma - 1.0) * (q[2] - 0.5 * q[1] * q[1] / q[0])

    def flux(self, u, x, mu):
        A = self.area(x, mu)
        q = u / A
        P = self.pressure(q)
        v = q[1] / q[0]
        return (A * jnp.array([q[1], q[1] * v + P, v * (q[2] + P)]))[:, None]

    def source(self, u, x, mu):
        P = self.pressure(self._q(u, x, mu))
        return jnp.array([0.0, P * nozzle_area_dx(x[0], mu[0], self.L), 0.0])

    def numerical_flux(self, ul, ur, n, x, mu):
        A = self.area(x, mu)
        return A * _roe_flux(ul / A, ur / A, n[0], self.gamma)

    def boundary_state(self, u, x, n, surface, mu):
        A = self.area(x, mu)
        q = u / A
        rho, v = q[0], q[1] / q[0]
        g1 = self.gamma - 1.0
        inlet = jnp.array([INLET_RHO, INLET_RHO * v, INLET_P / g1 + 0.5 * INLET_RHO * v * v])
        outlet = jnp.array([rho, rho * v, OUTLET_P / g1 + 0.5 * rho * v * v])
        return A * jnp.where(surface == 0, inlet, outlet)

    def _artificial_viscosity(self, uq, xq, wq, h, p, mu):
        A = nozzle_area(xq[:, 0], mu[0], self.L)
        rho = uq[:, 0] / A
        mean = jnp.sum(wq * rho) / jnp.sum(wq)
        ratio = jnp.sum(wq * (rho - mean) ** 2) / jnp.sum(wq * rho * rho)
        s = jnp.log10(ratio + 1e-30)
        ramp = jnp.where(s < self.s0 - self.kappa, 0.0,
                         jnp.where(s > self.s0 + self.kappa, 1.0,
                                   0.5 * (1.0 + jnp.sin(0.5 * jnp.pi * (s - self.s0) / self.kappa))))
        return self.av_scale * h / p * ramp

    def viscous_flux(self, u, grad_u, x, mu, eps):
        # diffuse the per-area state q = u / A
        A = self.area(x, mu)
        dA = nozzle_area_dx(x[0], mu[0], self.L)
        return eps * (grad_u - u[:, None] * dA / A)

    def admissible(self, U: np.ndarray) -> bool:
        U = np.asarray(U)
        if not np.all(np.isfinite(U)) or np.any(U[..., 0] <= 0.0):
            return False
        P = (self.gamma - 1.0) * (U[..., 2] - 0.5 * U[..., 1] ** 2 / U[..., 0])
        return bool(np.all(P > 0.0))


def nozzle_data(mu, L: float = NOZZLE_L, gamma: float = NOZZLE_GAMMA):
    """Area function, its derivative and a pointwise pressure evaluator."""
    mu = float(np.atleast_1d(mu)[0])
    A = lambda x: nozzle_area(np.asarray(x, dtype=float), mu, L)
    dA = lambda x: nozzle_area_dx(np.asarray(x, dtype=float), mu, L)

    def pressure(u, x):
        return nozzle_primitives(u, A(x), gamma)[3]

    return A, dA, pressure


def nozzle_mesh(n: int = 200, L: float = NOZZLE_L) -> Mesh:
    return build_structured_mesh([0.0], [L], n)


def nozzle_slice(n: int) -> np.ndarray:
    lo, hi = NOZZLE_BOUNDS[0]
    return (np.array([[0.5 * (lo + hi)]]) if n == 1 else
            np.linspace(lo, hi, n)[:, None])


def nozzle_initial_state(disc, mu) -> np.ndarray:
    """Subsonic state with the inlet density and a linear pressure drop."""
    from .fe import dof_coordinates
    X = dof_coordinates(disc.mesh, disc.ref)[..., 0]
    A = nozzle_area(X, float(np.atleast_1d(mu)[0]), disc.law.L)
    rho = np.ones_like(X)
    v = np.full_like(X, 0.3)
    P = INLET_P + (OUTLET_P - INLET_P) * X / disc.law.L
    E = P / (disc.law.gamma - 1.0) / rho + 0.5 * v * v
    return np.stack([A * rho, A * rho * v, A * rho * E], axis=-1).ravel()


def shock_family(mesh: Mesh, X_s: float) -> MappingFamily:
    """One-parameter 1D family x = X + c hat(X): the node at ``X_s`` moves to
    ``X_s + c`` and both sides stretch linearly, endpoints fixed."""
    X = mesh.nodes[:, 0]
    a, b = X.min(), X.max()
    if not a < X_s < b:
        raise ValueError(f"hinge {X_s} must lie strictly inside ({a}, {b})")
    hat = np.where(X <= X_s, (X - a) / (X_s - a), (b - X) / (b - X_s))
    return MappingFamily(mesh, X.copy(), hat.reshape(-1, 1))


def nozzle_shock_position(disc, U, xhat, mu, n_sample: int = 9) -> tuple[float, float]:
    """(physical, reference) position of the last supersonic-to-subsonic
    Mach crossing downstream of the throat, linearly interpolated."""
    law = disc.law
    ne, nb, m = disc.layout.n_elements, disc.layout.nbasis, disc.layout.m
    t = np.linspace(0.0, 1.0, n_sample)
    V = disc.ref.values(t[:, None])
    Ub = np.asarray(U, dtype=float).reshape(ne, nb, m)
    vals = np.einsum("pb,ebm->epm", V, Ub).reshape(-1, m)
    nodes = disc.mesh.nodes[disc.mesh.elements, 0]
    X = (nodes[:, :1] + (nodes[:, 1:] - nodes[:, :1]) * t).ravel()
    xn = np.asarray(getattr(xhat, "xhat", xhat), dtype=float).reshape(-1)[disc.mesh.elements]
    x = (xn[:, :1] + (xn[:, 1:] - xn[:, :1]) * t).ravel()
    q = vals / nozzle_area(x, float(np.atleast_1d(mu)[0]), law.L)[:, None]
    rho, v = q[:, 0], q[:, 1] / q[:, 0]
    P = (law.gamma - 1.0) * (q[:, 2] - 0.5 * rho * v * v)
    M = np.abs(v) / np.sqrt(law.gamma * np.maximum(P, 1e-300) / rho) - 1.0
    i = np.flatnonzero((M[:-1] > 0.0) & (M[1:] <= 0.0) & (x[:-1] > 0.5 * law.L))
    if i.size == 0:
        raise ValueError("no shock found downstream of the throat")
    i = i[-1]
    s = M[i] / (M[i] - M[i + 1])
    return float(x[i] + s * (x[i + 1] - x[i])), float(X[i] + s * (X[i + 1] - X[i]))


def track_shock(disc, family: MappingFamily, X_s: float, solve, xhat, mu, U0=None,
                tol: float = 1e-6, max_iter: int = 10):
    """r-adaptive HDM in a one-parameter hinge family: repeat the HDM solve
    while moving the hinge onto the computed shock until the shock sits at
    reference coordinate ``X_s``. Returns (state, family coordinates)."""
    D = np.asarray(family.directions, dtype=float)
    i = int(np.argmax(np.abs(D[:, 0])))
    c = np.array([(np.asarray(getattr(xhat, "xhat", xhat)).ravel()[i] - family.base[i]) / D[i, 0]])
    hist = []
    for _ in range(max_iter):
        x = family.nodes(c)
        U = solve(x, mu, U0)
        xs, Xs = nozzle_shock_position(disc, U, x, mu)
        err = Xs - X_s
        log.debug("shock tracking c=%.8f reference shock offset %.3e", c[0], err)
        if abs(err) <= tol * np.ptp(disc.mesh.nodes[:, 0]):
            return U, c
        if hist and hist[-1][1] != err:
            # secant on the reference shock offset
            c_new = c[0] - err * (c[0] - hist[-1][0]) / (err - hist[-1][1])
        else:
            c_new = xs - X_s
        hist.append((c[0], err))
        c = np.array([c_new])
        U0 = U
    raise HdmSolveError(f"shock tracking did not settle (reference shock at {Xs:.6f}, target {X_s:.6f})")


def box_constraint(mesh: Mesh) -> BoundaryConstraintMap:
    return build_boundary_constraint(mesh, box_planes(mesh.nodes.min(axis=0), mesh.nodes.max(axis=0)))


def full_space(mesh: Mesh, y0=None) -> FullMappingSpace:
    return FullMappingSpace(mesh, box_constraint(mesh), y0)


# Stagnation pressure ==========================================================
def stagnation_pressure(M: float, gamma: float = 1.4, P_inf: float = 1.0) -> float:
    """Pitot pressure behind a normal shock (Rayleigh pitot relation)."""
    if M < 1.0:
        raise ValueError(f"free-stream Mach number must be >= 1, got {M}")
    M2 = M * M
    return P_inf * ((1.0 - gamma + 2.0 * gamma * M2) / (gamma + 1.0)) * (
        (gamma + 1.0) ** 2 * M2 / (4.0 * gamma * M2 - 2.0 * (gamma - 1.0))) ** (gamma / (gamma - 1.0))
