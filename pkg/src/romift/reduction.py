"""POD compression, fixed-domain reduced-order models and L2 projection."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .hdm import DGDiscretization

log = logging.getLogger(__name__)


class RomSolveError(RuntimeError):
    pass


# POD ==========================================================================
def pod(S, n: int):
    """First ``n`` left singular vectors of ``S`` and all its singular values."""
    S = np.asarray(S, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    M = S.shape[1]
    if not 1 <= n <= M:
        raise ValueError(f"n = {n} must lie in [1, {M}]")
    U, s, _ = np.linalg.svd(S, full_matrices=False)
    return U[:, :n], s


def modes_for_energy(sigma, tol: float) -> int:
    """Smallest n with 1 - sum_{i<=n} sigma_i^2 / sum sigma_i^2 <= tol."""
    e = np.asarray(sigma, dtype=float) ** 2
    if e.sum() == 0.0:
        return 0
    tail = 1.0 - np.cumsum(e) / e.sum()
    return int(np.argmax(tail <= tol)) + 1


@dataclass
class ReducedBasis:
    offset: np.ndarray  # (N,)
    Phi: np.ndarray  # (N, k)
    sigma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # training parameters and reduced coordinates of their snapshots, used
    # to pick a starting point for nonlinear solves
    anchor_params: np.ndarray | None = None
    anchor_coords: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.Phi.shape[1]

    def initial_coords(self, mu=None) -> np.ndarray:
        """Coordinates of the nearest anchor snapshot, zero without anchors."""
        if self.anchor_params is None or mu is None or len(self.anchor_params) == 0:
            return np.zeros(self.k)
        P = np.atleast_2d(self.anchor_params)
        scale = np.ptp(P, axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        j = int(np.argmin(np.linalg.norm((P - np.atleast_1d(mu)) / scale, axis=1)))
        return np.array(self.anchor_coords[j, :self.k], dtype=float)

    def expand(self, w) -> np.ndarray:
        return self.offset + self.Phi @ np.asarray(w, dtype=float).ravel()

    def truncate(self, k: int) -> "ReducedBasis":
        if not 0 <= k <= self.k:
            raise ValueError(f"cannot truncate a {self.k}-column basis to {k}")
        return ReducedBasis(self.offset, self.Phi[:, :k], self.sigma, self.anchor_params,
                            None if self.anchor_coords is None else self.anchor_coords[:, :k])

    def project(self, U) -> np.ndarray:
        return self.Phi.T @ (np.asarray(U, dtype=float) - self.offset)


def build_basis(snapshots, n: int | None = None, energy: float | None = None,
                offset=None, params=None) -> ReducedBasis:
    """POD basis of the columns of ``snapshots`` minus ``offset`` (default 0).

    Without ``n`` or ``energy`` no truncation is applied (n = M). ``params``
    (one row per snapshot) records anchors for solver initialization.
    """
    S = np.asarray(snapshots, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    offset = np.zeros(S.shape[0]) if offset is None else np.asarray(offset, dtype=float)
    D = S - offset[:, None]
    U, s, _ = np.linalg.svd(D, full_matrices=False)
    if n is None:
        n = modes_for_energy(s, energy) if energy is not None else S.shape[1]
    if not 1 <= n <= S.shape[1]:
        raise ValueError(f"basis size {n} must lie in [1, {S.shape[1]}]")
    Phi = U[:, :n]
    if params is None:
        return ReducedBasis(offset, Phi, s)
    return ReducedBasis(offset, Phi, s, np.atleast_2d(np.asarray(params, dtype=float)), D.T @ Phi)


# Fixed-domain ROMs ============================================================
@dataclass
class RomResult:
    w: np.ndarray
    residual_norm: float
    gradient_norm: float
    iterations: int
    status: str = "converged"


def _lstsq(A, b):
    """min ||A x - b|| via QR; raises on numerical rank deficiency."""
    Q, R = np.linalg.qr(A, mode="reduced")
    d = np.abs(np.diag(R))
    if d.size and d.min() <= 1e-13 * max(d.max(), 1e-300):
        x, *_ = np.linalg.lstsq(A, b, rcond=None)
        return x
    return sla.solve_triangular(R, Q.T @ b)


def solve_rom_minres(disc: DGDiscretization, basis: ReducedBasis, mapping, mu, w0=None,
                     tol: float = 1e-8, max_iter: int = 50) -> RomResult:
    """Gauss-Newton for min_w 1/2 ||R(offset + Phi w; mapping, mu)||^2."""
    xhat = getattr(mapping, "xhat", mapping)
    w = basis.initial_coords(mu) if w0 is None else np.array(w0, dtype=float)
    R = disc.residual(basis.expand(w), xhat, mu)
    rn = float(np.linalg.norm(R))
    for it in range(max_iter + 1):
        U = basis.expand(w)
        Jw = disc.state_jacobian_product(U, xhat, mu, basis.Phi)
        grad = Jw.T @ R
        gn = float(np.linalg.norm(grad))
        if gn <= tol:
            return RomResult(w, rn, gn, it)
        if it == max_iter:
            break
        dw = _lstsq(Jw, -R)
        alpha = 1.0
        for _ in range(30):
            wt = w + alpha * dw
            Ut = basis.expand(wt)
            if disc.law.admissible(Ut.reshape(disc.layout.n_elements, disc.layout.nbasis, -1)):
                Rt = disc.residual(Ut, xhat, mu)
                rt = float(np.linalg.norm(Rt))
                if rt <= rn:
                    break
            alpha *= 0.5
        else:
            return RomResult(w, rn, gn, it, "line-search-failure")
        if rt == rn and alpha < 1.0:
            return RomResult(w, rn, gn, it, "stagnated")
        w, R, rn = wt, Rt, rt
    return RomResult(w, rn, gn, max_iter, "max-iter")


def solve_rom_galerkin(disc: DGDiscretization, basis: ReducedBasis, mapping, mu, w0=None,
                       tol: float = 1e-8, max_iter: int = 50) -> RomResult:
    """Newton on the Galerkin system Phi^T R(offset + Phi w) = 0."""
    xhat = getattr(mapping, "xhat", mapping)
    w = basis.initial_coords(mu) if w0 is None else np.array(w0, dtype=float)
    for it in range(max_iter + 1):
        U = basis.expand(w)
        R = disc.residual(U, xhat, mu)
        r = basis.Phi.T @ R
        rn = float(np.linalg.norm(r))
        if rn <= tol:
            return RomResult(w, float(np.linalg.norm(R)), rn, it)
        if it == max_iter:
            break
        A = basis.Phi.T @ disc.state_jacobian_product(U, xhat, mu, basis.Phi)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                lu = sla.lu_factor(A, check_finite=True)
            if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * np.max(np.abs(np.diag(lu[0]))):
                raise np.linalg.LinAlgError
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise RomSolveError("reduced Galerkin Jacobian is singular") from exc
        w = w + sla.lu_solve(lu, -r)
    return RomResult(w, float(np.linalg.norm(R)), rn, max_iter, "max-iter")


# L2 projection ================================================================
@dataclass
class Projection:
    coefficients: np.ndarray
    values: np.ndarray
    error: float
    relative_error: float


def l2_project(target, basis_funcs, weights) -> Projection:
    """L2-orthogonal projection of sampled ``target`` onto sampled
    ``basis_funcs`` (rows) using quadrature ``weights``."""
    f = np.asarray(target, dtype=float)
    B = np.atleast_2d(np.asarray(basis_funcs, dtype=float))
    w = np.asarray(weights, dtype=float)
    G = (B * w) @ B.T
    if np.linalg.cond(G) > 1e14:
        raise np.linalg.LinAlgError("singular Gram matrix")
    coef = np.linalg.solve(G, (B * w) @ f)
    proj = coef @ B
    err = float(np.sqrt(np.sum(w * (f - proj) ** 2)))
    nrm = float(np.sqrt(np.sum(w * f * f)))
    return Projection(coef, proj, err, err / nrm if nrm > 0 else np.inf)


def composite_gauss(a: float, b: float, n_intervals: int, n_points: int = 10, breaks=()):
    """Composite Gauss-Legendre points/weights on [a, b], with extra breakpoints."""
    edges = np.unique(np.concatenate([np.linspace(a, b, n_intervals + 1),
                                      [t for t in breaks if a < t < b]]))
    x, w = np.polynomial.legendre.leggauss(n_points)
    lo, hi = edges[:-1, None], edges[1:, None]
    X = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    W = 0.5 * (hi - lo) * w
    return X.ravel(), W.ravel()
