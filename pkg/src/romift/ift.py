"""Reduced-order model with implicit feature tracking (ROM-IFT).

The online problem minimizes 1/2 ||F(w, c)||^2 with

    F(w, c) = [R(offset + Phi w; xhat(c), mu); kappa (eta(xhat(c)) - eta(xhat_0))]

over reduced state coordinates w and mapping coordinates c with a
Levenberg-Marquardt method whose regularization acts on c only. Offline,
snapshots are aligned one at a time by the same solver over the full mapping
space before compression.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .hdm import DGDiscretization
from .mapping import Distortion, FullMappingSpace, MappingFamily, ReducedMappingSpace
from .reduction import ReducedBasis, build_basis, solve_rom_minres

log = logging.getLogger(__name__)

WOLFE_C1, WOLFE_C2 = 1e-4, 0.9
MAX_HALVINGS = 30


class RankDeficientError(np.linalg.LinAlgError):
    pass


# Objective ====================================================================
class IftObjective:
    """Residual-form ROM-IFT objective for one discretization and basis."""

    def __init__(self, disc: DGDiscretization, basis: ReducedBasis, family: MappingFamily,
                 kappa: float = 0.0, nominal=None, eps: float = 1e-8):
        if kappa < 0:
            raise ValueError("kappa must be nonnegative")
        self.disc, self.basis, self.family = disc, basis, family
        self.kappa = float(kappa)
        self.nominal = (family.mesh.nodes.ravel() if nominal is None
                        else np.asarray(getattr(nominal, "xhat", nominal), dtype=float).ravel())
        self.eps = eps
        self._dist = Distortion(family.mesh, eps) if self.kappa > 0 else None
        self._eta0 = self._dist(self.nominal) if self._dist else None

    @property
    def n_w(self) -> int:
        return self.basis.k

    @property
    def n_c(self) -> int:
        return self.family.n

    def xhat(self, c) -> np.ndarray:
        return self.family.nodes(c)

    def admissible(self, c) -> bool:
        return self.disc.min_jacobian(self.xhat(c)) > 0.0

    def evaluate_F(self, w, c, mu) -> np.ndarray | None:
        """Stacked residual, or None if the mapping is not invertible."""
        x = self.xhat(c)
        if not self.disc.min_jacobian(x) > 0.0:
            return None
        U = self.basis.expand(w)
        layout = self.disc.layout
        if not self.disc.law.admissible(U.reshape(layout.n_elements, layout.nbasis, -1)):
            return None
        R = self.disc.residual(U, x, mu)
        if self.kappa == 0.0:
            return R
        return np.concatenate([R, self.kappa * (self._dist(x) - self._eta0)])

    def evaluate_jacobians(self, w, c, mu):
        """Dense (J_w, J_c)."""
        x, U = self.xhat(c), self.basis.expand(w)
        D = self.family.directions
        disc = self.disc
        if sp.issparse(D) or self.n_w > 24 or self.n_c > 24:
            dRdU, dRdx = disc.jacobians(U, x, mu)
            Jw = np.asarray(dRdU @ self.basis.Phi)
            Jc = dRdx @ D
            Jc = Jc.toarray() if sp.issparse(Jc) else np.asarray(Jc)
        else:
            Jw = disc.state_jacobian_product(U, x, mu, self.basis.Phi)
            Jc = disc.mapping_jacobian_product(U, x, mu, D)
        if self.kappa > 0.0:
            dEta = self._dist.gradient(x) @ D
            dEta = dEta.toarray() if sp.issparse(dEta) else np.asarray(dEta)
            Jw = np.vstack([Jw, np.zeros((dEta.shape[0], self.n_w))])
            Jc = np.vstack([Jc, self.kappa * dEta])
        return Jw, Jc

    def directional_derivative(self, w, c, mu, dw, dc) -> np.ndarray:
        """J_w dw + J_c dc without forming either block."""
        x, U = self.xhat(c), self.basis.expand(w)
        dx = self.family.directions @ np.asarray(dc, dtype=float)
        out = self.disc.state_jvp(U, x, mu, (self.basis.Phi @ dw)[:, None])[:, 0]
        if self.n_c:
            out = out + self.disc.mapping_jvp(U, x, mu, np.asarray(dx)[:, None])[:, 0]
        if self.kappa > 0.0:
            out = np.concatenate([out, self.kappa * (self._dist.gradient(x) @ dx)])
        return out


def objective_value(F) -> float:
    return math.inf if F is None else 0.5 * float(F @ F)


def evaluate_F(obj: IftObjective, w, c, mu):
    return obj.evaluate_F(w, c, mu)


def evaluate_jacobians(obj: IftObjective, w, c, mu):
    return obj.evaluate_jacobians(w, c, mu)


# Linear algebra ===============================================================
def lm_step(F, Jw, Jc, lam: float):
    """Solve min || [F; 0] + [[Jw, Jc], [0, sqrt(lam) I]] [dw; dc] || by QR.

    Raises RankDeficientError when the stacked matrix is numerically rank
    deficient.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    F = np.asarray(F, dtype=float)
    Jw, Jc = np.atleast_2d(Jw), np.atleast_2d(Jc)
    k, n = Jw.shape[1], Jc.shape[1]
    A = np.hstack([Jw, Jc])
    b = -F
    if lam > 0 and n > 0:
        A = np.vstack([A, np.hstack([np.zeros((n, k)), math.sqrt(lam) * np.eye(n)])])
        b = np.concatenate([b, np.zeros(n)])
    if A.shape[1] == 0:
        return np.zeros(0), np.zeros(0)
    Q, R = np.linalg.qr(A, mode="reduced")
    d = np.abs(np.diag(R))
    if A.shape[0] < A.shape[1] or d.min() <= 1e-13 * max(d.max(), 1e-300):
        raise RankDeficientError("stacked least-squares matrix is rank deficient")
    z = sla.solve_triangular(R, Q.T @ b)
    return z[:k], z[k:]


@dataclass
class LineSearchResult:
    alpha: float
    F: np.ndarray | None
    value: float
    status: str  # "wolfe" | "armijo" | "line-search-failure"
    evaluations: int


def line_search(phi: Callable, dphi0: float, value0: float, c1: float = WOLFE_C1,
                c2: float = WOLFE_C2, max_halvings: int = MAX_HALVINGS) -> LineSearchResult:
    """Weak-Wolfe bracketing line search starting from alpha = 1.

    ``phi(alpha)`` returns ``(value, F, slope_fn)`` where ``slope_fn()``
    evaluates the directional derivative at the trial point; infinite values
    (e.g. inverted mappings) are treated as Armijo failures.
    """
    if not dphi0 < 0:
        return LineSearchResult(0.0, None, value0, "line-search-failure", 0)
    lo, hi, alpha = 0.0, math.inf, 1.0
    best = None
    halvings = evals = 0
    while halvings <= max_halvings and evals < 2 * max_halvings + 10:
        val, F, slope = phi(alpha)
        evals += 1
        if not math.isfinite(val) or val > value0 + c1 * alpha * dphi0:
            hi = alpha
            alpha = 0.5 * (lo + hi)
            halvings += 1
            continue
        if best is None or val < best[1]:
            best = (alpha, val, F)
        if slope() < c2 * dphi0:
            lo = alpha
            if math.isinf(hi):
                alpha *= 2.0
                if alpha > 64.0:
                    break
            else:
                alpha = 0.5 * (lo + hi)
                halvings += 1
            continue
        return LineSearchResult(alpha, F, val, "wolfe", evals)
    if best is not None:
        return LineSearchResult(best[0], best[2], best[1], "armijo", evals)
    return LineSearchResult(0.0, None, value0, "line-search-failure", evals)


def check_convergence(grad_w, grad_c, eps1: float = 1e-8, eps2: float = 1e-8) -> bool:
    return bool(np.linalg.norm(grad_w) <= eps1 and np.linalg.norm(grad_c) <= eps2)


# Solver =======================================================================
@dataclass
class IftSolution:
    w: np.ndarray
    c: np.ndarray
    objective: float
    residual_norm: float
    grad_w: float
    grad_c: float
    iterations: int
    history: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    status: str = "converged"
    initial_objective: float = math.nan


def initialize_ift(obj: IftObjective, mu, c0=None):
    """c0 (default zero) and the minimum-residual state at xhat(c0)."""
    c0 = np.zeros(obj.n_c) if c0 is None else np.asarray(c0, dtype=float).copy()
    rom = solve_rom_minres(obj.disc, obj.basis, obj.xhat(c0), mu)
    return rom.w, c0


def _initial_lambda(Jc) -> float:
    if Jc.shape[1] == 0:
        return 0.0
    return 1e-4 * float(np.max(np.abs(Jc.T @ Jc).sum(axis=1)))


def solve_ift(obj: IftObjective, mu, w0=None, c0=None, eps1: float = 1e-8, eps2: float = 1e-8,
              max_iter: int = 200, lam: float | None = None, lam_min: float = 0.0) -> IftSolution:
    """Levenberg-Marquardt with a Wolfe line search.

    ``lam=None`` selects the adaptive Marquardt rule; a number fixes it.
    """
    if w0 is None or c0 is None:
        w_init, c_init = initialize_ift(obj, mu, c0)
        w0 = w_init if w0 is None else w0
        c0 = c_init
    w, c = np.array(w0, dtype=float), np.array(c0, dtype=float)
    F = obj.evaluate_F(w, c, mu)
    if F is None:
        raise ValueError("initial mapping is not invertible")
    val = objective_value(F)
    sol = IftSolution(w, c, val, 0.0, math.nan, math.nan, 0, [val], initial_objective=val)
    adaptive = lam is None
    lam_k = None if adaptive else float(lam)
    status = "max-iter"
    nr = obj.disc.N
    for it in range(max_iter + 1):
        Jw, Jc = obj.evaluate_jacobians(w, c, mu)
        gw, gc = Jw.T @ F, Jc.T @ F
        sol.grad_w, sol.grad_c = float(np.linalg.norm(gw)), float(np.linalg.norm(gc))
        log.info("ift iter=%d J=%.6e grad_w=%.3e grad_c=%.3e lambda=%s", it, val,
                 sol.grad_w, sol.grad_c, lam_k)
        if check_convergence(gw, gc, eps1, eps2):
            status = "converged"
            break
        if it == max_iter:
            break
        if adaptive and lam_k is None:
            lam_k = max(_initial_lambda(Jc), lam_min)
        accepted = False
        for _ in range(MAX_HALVINGS):
            try:
                dw, dc = lm_step(F, Jw, Jc, lam_k)
            except RankDeficientError:
                if not adaptive:
                    status = "rank-deficient"
                    break
                lam_k = max(10.0 * lam_k, 1e-12)
                continue
            dphi0 = float(F @ (Jw @ dw + Jc @ dc))

            def phi(alpha, dw=dw, dc=dc):
                wt, ct = w + alpha * dw, c + alpha * dc
                Ft = obj.evaluate_F(wt, ct, mu)
                vt = objective_value(Ft)
                return vt, Ft, (lambda: float(Ft @ obj.directional_derivative(wt, ct, mu, dw, dc)))

            ls = line_search(phi, dphi0, val)
            if ls.status == "line-search-failure" or ls.value >= val:
                if not adaptive or lam_k > 1e20:
                    break
                lam_k = max(10.0 * lam_k, 1e-12)
                continue
            accepted = True
            break
        if not accepted:
            if status != "rank-deficient":
                status = "line-search-failure"
            break
        w, c = w + ls.alpha * dw, c + ls.alpha * dc
        F, val = ls.F, ls.value
        sol.history.append(val)
        sol.alphas.append(ls.alpha)
        sol.lambdas.append(lam_k)
        if adaptive and ls.alpha == 1.0:
            lam_k = max(lam_k / 10.0, lam_min)
        sol.iterations = it + 1
    sol.w, sol.c, sol.objective, sol.status = w, c, val, status
    sol.residual_norm = float(np.linalg.norm(F[:nr]))
    return sol


# Offline training =============================================================
@dataclass
class TrainingArchive:
    params: np.ndarray
    coords: list  # aligned mapping coordinates in the offline family
    snapshots: list  # HDM states at the aligned mappings
    statuses: list
    residuals: list


@dataclass
class TrainingResult:
    basis: ReducedBasis
    mapping_space: MappingFamily
    archive: TrainingArchive
    sigma: np.ndarray


def reduce_family(family: MappingFamily, coords, n: int | None = None,
                  rtol: float = 1e-12) -> MappingFamily:
    """Affine mapping space through coords[0] spanned by POD of
    coords[i] - coords[0]."""
    Z = [np.asarray(z, dtype=float).ravel() for z in coords]
    M = len(Z)
    explicit = n is not None
    n = M - 1 if n is None else int(n)
    if n > M - 1:
        raise ValueError(f"n' = {n} exceeds the {M - 1} available difference snapshots")
    if n > 0:
        U, s, _ = np.linalg.svd(np.column_stack([z - Z[0] for z in Z[1:]]), full_matrices=False)
        rank = int(np.sum(s > rtol * max(s[0], 1e-300)))
        if n > rank:
            if explicit:
                warnings.warn(f"mapping basis truncated to rank {rank} (requested {n})")
            n = rank
        Psi = U[:, :n]
    else:
        Psi = np.zeros((Z[0].size, 0))
    if isinstance(family, FullMappingSpace):
        return ReducedMappingSpace(family.mesh, family.chi, family.y0 + Z[0], Psi)
    D = family.directions @ Psi
    return MappingFamily(family.mesh, family.nodes(Z[0]), D.toarray() if sp.issparse(D) else D)


def align_snapshot(disc: DGDiscretization, basis: ReducedBasis, mu, family: MappingFamily,
                   c0=None, kappa: float = 0.0, **solver_kw) -> IftSolution:
    """Align parameter ``mu`` to ``basis`` over ``family`` (warm start ``c0``)."""
    obj = IftObjective(disc, basis, family, kappa=kappa)
    w0, c0 = initialize_ift(obj, mu, c0)
    return solve_ift(obj, mu, w0, c0, **solver_kw)


def _hdm_output(out, c):
    if isinstance(out, tuple):
        U, c = out
        return np.asarray(U, dtype=float), np.asarray(c, dtype=float).ravel()
    return np.asarray(out, dtype=float), c


def offline_train(disc: DGDiscretization, params, family: MappingFamily,
                  hdm_solve: Callable, kappa: float | Callable = 0.0, n_map: int | None = None,
                  solver_kw: dict | None = None, on_snapshot: Callable | None = None) -> TrainingResult:
    """Sequential alignment, HDM solve and compression over ordered ``params``.

    ``hdm_solve(xhat, mu, U0)`` returns a converged state, or ``(state, c)``
    for an HDM that adapts its own mapping to family coordinates ``c``; the
    adapted coordinates then replace the aligned ones. The first snapshot
    uses the mapping at family coordinates zero, which must be the identity.
    ``kappa`` may be a callable ``(objective, w0, c0, mu) -> float``.
    """
    P = np.atleast_2d(np.asarray(params, dtype=float))
    if P.shape[0] == 0:
        raise ValueError("empty training set")
    solver_kw = dict(solver_kw or {})
    z1 = np.zeros(family.n)
    U1, z1 = _hdm_output(hdm_solve(family.nodes(z1), P[0], None), z1)
    archive = TrainingArchive(P, [z1], [U1], ["identity"], [0.0])
    nrm = np.linalg.norm(U1)
    basis = ReducedBasis(np.zeros(disc.N), (U1 / nrm)[:, None], np.array([nrm]), P[:1],
                         np.array([[nrm]]))
    scale = np.ptp(P, axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    for k in range(1, P.shape[0]):
        mu = P[k]
        # warm start from the nearest already-aligned parameter
        j = int(np.argmin(np.linalg.norm((P[:k] - mu) / scale, axis=1)))
        obj = IftObjective(disc, basis, family)
        w0, c0 = initialize_ift(obj, mu, archive.coords[j])
        kap = kappa(obj, w0, c0, mu) if callable(kappa) else float(kappa)
        if kap != obj.kappa:
            obj = IftObjective(disc, basis, family, kappa=kap)
        sol = solve_ift(obj, mu, w0, c0, **solver_kw)
        log.info("aligned snapshot %d/%d status=%s iters=%d J=%.3e", k + 1, P.shape[0],
                 sol.status, sol.iterations, sol.objective)
        U, c = _hdm_output(hdm_solve(family.nodes(sol.c), mu, basis.expand(sol.w)), sol.c)
        archive.coords.append(c)
        archive.snapshots.append(U)
        archive.statuses.append(sol.status)
        archive.residuals.append(sol.residual_norm)
        basis = build_basis(np.column_stack(archive.snapshots), params=P[:k + 1])
        if on_snapshot is not None:
            on_snapshot(k, sol, U)
    mapping_space = reduce_family(family, archive.coords, n_map)
    return TrainingResult(basis, mapping_space, archive, basis.sigma)


def train_fixed(params, hdm_solve: Callable, xhat, n: int | None = None) -> ReducedBasis:
    """Non-aligned POD basis from HDM snapshots on a single mapping."""
    P = np.atleast_2d(np.asarray(params, dtype=float))
    S = np.column_stack([hdm_solve(xhat, mu, None) for mu in P])
    return build_basis(S, n=n, params=P)


def select_kappa(obj: IftObjective, w0, c0, mu, target: float = 1e-2, seed: int = 0) -> float:
    """kappa with kappa^2 J_map(perturbed) = target J_err at the initial point.

    The perturbation moves every mapping coordinate by a quarter of the mean
    element size in a fixed pseudo-random direction; returns 0 when the
    distortion does not respond (e.g. in one dimension).
    """
    mesh = obj.family.mesh
    h = float(np.mean(mesh.element_volumes()) ** (1.0 / mesh.dim))
    dist = Distortion(mesh, obj.eps)
    x0 = obj.xhat(c0)
    rng = np.random.default_rng(seed)
    D = obj.family.directions
    d = D @ rng.choice([-1.0, 1.0], size=obj.n_c)
    d = np.asarray(d).ravel()
    nrm = np.max(np.abs(d))
    if nrm == 0:
        return 0.0
    xp = x0 + 0.25 * h * d / nrm
    jmap = 0.5 * float(np.sum((dist(xp) - dist(obj.nominal)) ** 2))
    R = obj.disc.residual(obj.basis.expand(w0), x0, mu)
    jerr = 0.5 * float(R @ R)
    if jmap <= 1e-14 * max(1.0, float(np.sum(dist(obj.nominal) ** 2))):
        return 0.0
    return math.sqrt(target * jerr / jmap)
