"""DG discretization of a conservation law transformed to the reference
domain, its Jacobians with respect to state and mapping coefficients, and a
globalized Newton solver.

The residual of element K is

    R_K = sum_f int_f v H(U-, U+, n~) ds0 - int_K grad0 v : F dV0 - int_K v S dV0

with F = g f G^{-T}, S = g s and n~ ds0 = g G^{-T} N ds0 (Nanson). Element
kernels are written once in JAX; Jacobian blocks come from forward-mode
autodiff and are scattered into scipy sparse matrices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fe import Mesh, ReferenceElement, StateField, StateLayout, quadrature_for

jax.config.update("jax_enable_x64", True)

log = logging.getLogger(__name__)

SINGULAR_TOL = 1e-14


class MappingError(ValueError):
    """Raised when a mapping is not invertible on the quadrature points."""


class HdmSolveError(RuntimeError):
    pass


# Conservation laws ============================================================
class ConservationLaw:
    """Pointwise description of div f(u, x; mu) = s(u, x; mu).

    Subclasses implement the methods below with ``jax.numpy`` so the element
    kernels can be differentiated. ``x`` is the physical point; numerical
    fluxes receive the scaled normal n~ ds0 and must be positively
    homogeneous of degree one in it.
    """

    m: int = 1
    dim: int = 1
    param_names: tuple = ()
    param_bounds: tuple = ()  # ((lo, hi), ...)

    def flux(self, u, x, mu):  # (m,) -> (m, d)
        raise NotImplementedError

    def source(self, u, x, mu):  # (m,) -> (m,)
        return jnp.zeros_like(u)

    def numerical_flux(self, ul, ur, n, x, mu):  # -> (m,)
        raise NotImplementedError

    def boundary_state(self, u, x, n, surface, mu):  # ghost state, (m,)
        raise NotImplementedError

    # optional shock capturing: return None for inviscid laws
    artificial_viscosity = None

    def viscous_flux(self, u, grad_u, x, mu, eps):  # (m, d)
        return eps * grad_u

    def admissible(self, U: np.ndarray) -> bool:
        return bool(np.all(np.isfinite(U)))

    def element_order(self, centroids: np.ndarray, mu) -> np.ndarray | None:
        """Element ordering in which dR/dU is block lower triangular, if known."""
        return None

    def check_parameter(self, mu) -> np.ndarray:
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        if self.param_bounds:
            if mu.size != len(self.param_bounds):
                raise ValueError(f"expected {len(self.param_bounds)} parameters, got {mu.size}")
            for v, (lo, hi), name in zip(mu, self.param_bounds, self.param_names):
                if not lo - 1e-12 <= v <= hi + 1e-12:
                    raise ValueError(f"parameter {name}={v} outside [{lo}, {hi}]")
        return mu


def transform_flux_source(w, G, g, mu, law: ConservationLaw, x=None):
    """Reference-domain flux and source at a single point.

    Works with numpy or jax arrays. ``x`` defaults to the origin for laws
    without explicit spatial dependence.
    """
    g = float(g) if np.ndim(g) == 0 and not isinstance(g, jax.Array) else g
    if np.all(np.abs(np.asarray(g)) < SINGULAR_TOL):
        raise MappingError("singular mapping Jacobian")
    G = jnp.atleast_2d(jnp.asarray(G, dtype=float))
    x = jnp.zeros(G.shape[0]) if x is None else jnp.atleast_1d(jnp.asarray(x, dtype=float))
    w = jnp.atleast_1d(jnp.asarray(w, dtype=float))
    mu = jnp.atleast_1d(jnp.asarray(mu, dtype=float))
    f = law.flux(w, x, mu)
    F = g * f @ jnp.linalg.inv(G).T
    S = g * law.source(w, x, mu)
    return np.asarray(F), np.asarray(S)


# Discretization ===============================================================
@dataclass
class ResidualWorkspace:
    """Mesh- and degree-dependent tables used by the element kernels."""

    nbr: np.ndarray  # (ne, nf), self index on boundary faces
    is_bnd: np.ndarray  # (ne, nf) bool
    surf: np.ndarray  # (ne, nf), -1 for interior faces
    Vn: np.ndarray  # (ne, nf, nqf, nb) neighbor basis at matched points
    dVn: np.ndarray  # (ne, nf, nqf, nb, d) neighbor master gradients
    NdS0: np.ndarray  # (ne, nf, d) reference normal times master-to-reference face scaling
    JXinv: np.ndarray  # (ne, d, d)
    detJX: np.ndarray  # (ne,)


class DGDiscretization:
    """Discontinuous Galerkin residual R(U; xhat, mu) on a fixed reference mesh."""

    def __init__(self, mesh: Mesh, law: ConservationLaw, degree: int,
                 volume_order: int | None = None, face_order: int | None = None):
        if law.dim != mesh.dim:
            raise ValueError(f"law is {law.dim}D but mesh is {mesh.dim}D")
        self.mesh, self.law, self.degree = mesh, law, int(degree)
        self.ref = ReferenceElement(mesh.shape, self.degree)
        self.geo = ReferenceElement(mesh.shape, 1)
        self.layout = StateLayout(mesh.n_elements, self.ref.nbasis, law.m)
        self.vquad = quadrature_for(mesh.shape, volume_order or 2 * self.degree + 1)
        self.face_order = face_order or 2 * self.degree + 2
        self.viscous = law.artificial_viscosity is not None
        self.ws = self._build_workspace()
        self._build_kernels()

    # setup ------------------------------------------------------------------
    @property
    def N(self) -> int:
        return self.layout.size

    @property
    def n_mapping(self) -> int:
        return self.mesh.n_nodes * self.mesh.dim

    def _build_workspace(self) -> ResidualWorkspace:
        mesh, ref = self.mesh, self.ref
        ne, nf, d = mesh.n_elements, ref.nfaces, mesh.dim
        nbr = mesh.face_neighbors()
        is_bnd = nbr < 0
        surf = -np.ones((ne, nf), dtype=np.int64)
        for e, f, s in mesh.boundary_faces:
            surf[e, f] = s
        if np.any(is_bnd & (surf < 0)):
            raise ValueError("mesh has untagged boundary faces")
        nbr = np.where(is_bnd, np.arange(ne)[:, None], nbr)
        JX = mesh.element_jacobians()
        JXinv = np.linalg.inv(JX)
        detJX = np.linalg.det(JX)
        X0 = mesh.nodes[mesh.elements[:, 0]]
        self._fq = [ref.face_quadrature(f, self.face_order) for f in range(nf)]
        nqf = self._fq[0][0].shape[0]
        Vn = np.zeros((ne, nf, nqf, ref.nbasis))
        dVn = np.zeros((ne, nf, nqf, ref.nbasis, d))
        NdS0 = np.zeros((ne, nf, d))
        for f in range(nf):
            xi_f = self._fq[f][0]
            X = X0[:, None, :] + np.einsum("eij,qj->eqi", JX, xi_f)
            nb = nbr[:, f]
            xi_n = np.einsum("eij,eqj->eqi", JXinv[nb], X - X0[nb][:, None, :])
            flat = xi_n.reshape(-1, d)
            Vn[:, f] = ref.values(flat).reshape(ne, nqf, -1)
            dVn[:, f] = ref.grads(flat).reshape(ne, nqf, ref.nbasis, d)
            NdS0[:, f] = detJX[:, None] * np.einsum("eji,j->ei", JXinv, ref.face_normal(f))
        return ResidualWorkspace(nbr, is_bnd, surf, Vn, dVn, NdS0, JXinv, detJX)

    def _build_kernels(self):
        law, ref, geo, d = self.law, self.ref, self.geo, self.mesh.dim
        nf = ref.nfaces
        qp, qw = self.vquad.points, self.vquad.weights
        Vq, dVq = jnp.asarray(ref.values(qp)), jnp.asarray(ref.grads(qp))
        Pq, dPq = jnp.asarray(geo.values(qp)), jnp.asarray(geo.grads(qp))
        wq = jnp.asarray(qw)
        Vf = [jnp.asarray(ref.values(p)) for p, _ in self._fq]
        dVf = [jnp.asarray(ref.grads(p)) for p, _ in self._fq]
        Pf = [jnp.asarray(geo.values(p)) for p, _ in self._fq]
        dPf = [jnp.asarray(geo.grads(p)) for p, _ in self._fq]
        wf = [jnp.asarray(w) for _, w in self._fq]
        Vq0 = jnp.asarray(ref.values(qp))
        vol_master = float(np.sum(qw))
        p = max(self.degree, 1)

        flux = jax.vmap(law.flux, in_axes=(0, 0, None))
        source = jax.vmap(law.source, in_axes=(0, 0, None))
        numflux = jax.vmap(law.numerical_flux, in_axes=(0, 0, 0, 0, None))
        bstate = jax.vmap(law.boundary_state, in_axes=(0, 0, 0, None, None))
        vflux = jax.vmap(law.viscous_flux, in_axes=(0, 0, 0, None, None))

        def geometry(xK, dP, JXinv):
            Jx = jnp.einsum("ai,qak->qik", xK, dP)
            G = Jx @ JXinv
            return G, jnp.linalg.det(G), jnp.linalg.inv(G)

        def avisc(uK, xK, JXinv, detJX, mu):
            # elementwise artificial viscosity from the law's sensor
            G, g, _ = geometry(xK, dPq, JXinv)
            xq = Pq @ xK
            h = (jnp.abs(g[0]) * detJX * vol_master) ** (1.0 / d)
            return law.artificial_viscosity(Vq0 @ uK, xq, wq * detJX * g, h, p, mu)

        def kernel(uK, unb, xK, xnb, Vn, dVn, isb, surf, NdS0, JXinv, JXinv_nb, detJX, detJX_nb, mu):
            G, g, Ginv = geometry(xK, dPq, JXinv)
            xq = Pq @ xK
            uq = Vq @ uK
            F = g[:, None, None] * jnp.einsum("qmk,qjk->qmj", flux(uq, xq, mu), Ginv)
            S = g[:, None] * source(uq, xq, mu)
            dV0 = dVq @ JXinv  # (nq, nb, d) reference gradients
            wdet = wq * detJX
            R = -jnp.einsum("q,qbk,qmk->bm", wdet, dV0, F) - jnp.einsum("q,qb,qm->bm", wdet, Vq, S)
            if self.viscous:
                epsK = avisc(uK, xK, JXinv, detJX, mu)
                gradx = jnp.einsum("bm,qbk,qkj->qmj", uK, dV0, Ginv)
                Fv = g[:, None, None] * jnp.einsum(
                    "qmk,qjk->qmj", vflux(uq, gradx, xq, mu, epsK), Ginv)
                R = R + jnp.einsum("q,qbk,qmk->bm", wdet, dV0, Fv)
                hK = (jnp.abs(g[0]) * detJX * vol_master) ** (1.0 / d)
            for f in range(nf):
                Gf, gf, Gfinv = geometry(xK, dPf[f], JXinv)
                xf = Pf[f] @ xK
                n = gf[:, None] * jnp.einsum("qkj,k->qj", Gfinv, NdS0[f])
                uin = Vf[f] @ uK
                uext = Vn[f] @ unb[f]
                ghost = bstate(uin, xf, n, surf[f], mu)
                uout = jnp.where(isb[f], ghost, uext)
                H = numflux(uin, uout, n, xf, mu)
                if self.viscous:
                    xn = xnb[f]
                    Gn, gn, Gninv = geometry(xn, dPf[f], JXinv_nb[f])
                    epsN = avisc(unb[f], xn, JXinv_nb[f], detJX_nb[f], mu)
                    hN = (jnp.abs(gn[0]) * detJX_nb[f] * vol_master) ** (1.0 / d)
                    dV0f = dVf[f] @ JXinv
                    dV0n = dVn[f] @ JXinv_nb[f]
                    gin = jnp.einsum("bm,qbk,qkj->qmj", uK, dV0f, Gfinv)
                    gout = jnp.einsum("bm,qbk,qkj->qmj", unb[f], dV0n, Gninv)
                    fvin = vflux(uin, gin, xf, mu, epsK)
                    fvout = vflux(uext, gout, xf, mu, epsN)
                    jump = uin - uext
                    nn = jnp.sqrt(jnp.sum(n * n, axis=1))
                    sigma = (p + 1) ** 2 * 0.5 * (epsK + epsN) / (0.5 * (hK + hN))
                    Hv = (0.5 * jnp.einsum("qmj,qj->qm", fvin + fvout, n)
                          - sigma * nn[:, None] * jump)
                    H = H - jnp.where(isb[f], 0.0, Hv)
                    # symmetric interior-penalty term
                    gradv = jnp.einsum("qbk,qkj,qj->qb", dV0f, Gfinv, n)
                    sym = 0.5 * epsK * jnp.einsum("q,qb,qm->bm", wf[f], gradv, jump)
                    R = R - jnp.where(isb[f], 0.0, sym)
                R = R + jnp.einsum("q,qb,qm->bm", wf[f], Vf[f], H)
            return R

        ws = self.ws
        self._static = (jnp.asarray(ws.Vn), jnp.asarray(ws.dVn), jnp.asarray(ws.is_bnd),
                        jnp.asarray(ws.surf), jnp.asarray(ws.NdS0), jnp.asarray(ws.JXinv),
                        jnp.asarray(ws.JXinv[ws.nbr]), jnp.asarray(ws.detJX),
                        jnp.asarray(ws.detJX[ws.nbr]))
        in_axes = (0,) * 13 + (None,)
        self._kernel = kernel
        vk = jax.vmap(kernel, in_axes=in_axes)
        wrt = (0, 1, 2, 3) if self.viscous else (0, 1, 2)
        vjac = jax.vmap(jax.jacrev(kernel, argnums=wrt), in_axes=in_axes)
        nbr, conn = jnp.asarray(ws.nbr), jnp.asarray(self.mesh.elements)
        ne, nb, m = self.layout.n_elements, self.layout.nbasis, self.layout.m

        def gather(U, xhat):
            Ub = U.reshape(ne, nb, m)
            xK = xhat.reshape(-1, d)[conn]
            return Ub, Ub[nbr], xK, xK[nbr]

        def residual(U, xhat, mu):
            return vk(*gather(U, xhat), *self._static, mu).ravel()

        def jacobian_blocks(U, xhat, mu):
            return vjac(*gather(U, xhat), *self._static, mu)

        self._residual = jax.jit(residual)
        self._jac_blocks = jax.jit(jacobian_blocks)
        self._jvp_state = jax.jit(lambda U, xhat, mu, V: jax.vmap(
            lambda v: jax.jvp(lambda u: residual(u, xhat, mu), (U,), (v,))[1],
            in_axes=1, out_axes=1)(V))
        self._jvp_map = jax.jit(lambda U, xhat, mu, D: jax.vmap(
            lambda v: jax.jvp(lambda x: residual(U, x, mu), (xhat,), (v,))[1],
            in_axes=1, out_axes=1)(D))
        self._build_sparsity()

    def _build_sparsity(self):
        ne, nb, m = self.layout.n_elements, self.layout.nbasis, self.layout.m
        d = self.mesh.dim
        conn, nbr = self.mesh.elements, self.ws.nbr
        dofs = np.arange(ne)[:, None] * nb * m + np.arange(nb * m)[None, :]
        xdofs = (d * conn[:, :, None] + np.arange(d)).reshape(ne, -1)
        cols_u = np.concatenate([dofs, dofs[nbr].reshape(ne, -1)], axis=1)
        cols_x = np.concatenate([xdofs, xdofs[nbr].reshape(ne, -1)], axis=1) if self.viscous else xdofs
        self._pattern = {}
        for key, cols, ncol in (("u", cols_u, self.N), ("x", cols_x, self.n_mapping)):
            r = np.repeat(dofs[:, :, None], cols.shape[1], axis=2).ravel()
            c = np.repeat(cols[:, None, :], nb * m, axis=1).ravel()
            # entries -> CSR slots (duplicates from boundary self-references are summed)
            keys, inv = np.unique(r * ncol + c, return_inverse=True)
            indptr = np.searchsorted(keys // ncol, np.arange(self.N + 1))
            self._pattern[key] = (inv, keys % ncol, indptr, keys.size, ncol)

    def _to_csr(self, key, vals):
        inv, indices, indptr, nnz, ncol = self._pattern[key]
        data = np.bincount(inv, weights=vals.ravel(), minlength=nnz)
        return sp.csr_matrix((data, indices, indptr), shape=(self.N, ncol))

    # public API -------------------------------------------------------------
    def _args(self, U, xhat, mu):
        U = U.coefficients if isinstance(U, StateField) else U
        U = np.asarray(U, dtype=float).ravel()
        if U.size != self.N:
            raise ValueError(f"state has length {U.size}, expected {self.N}")
        if not np.all(np.isfinite(U)):
            raise ValueError("state contains NaN or Inf")
        xhat = getattr(xhat, "xhat", xhat)
        xhat = np.asarray(xhat, dtype=float).ravel()
        if xhat.size != self.n_mapping:
            raise ValueError(f"mapping has length {xhat.size}, expected {self.n_mapping}")
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        return jnp.asarray(U), jnp.asarray(xhat), jnp.asarray(mu)

    def min_jacobian(self, xhat) -> float:
        """Minimum of g over the volume quadrature points (constant per element for q = 1)."""
        xhat = getattr(xhat, "xhat", xhat)
        x = np.asarray(xhat, dtype=float).reshape(-1, self.mesh.dim)[self.mesh.elements]
        Jx = np.transpose(x[:, 1:, :] - x[:, :1, :], (0, 2, 1))
        return float(np.min(np.linalg.det(Jx) / self.ws.detJX))

    def check_mapping(self, xhat):
        gmin = self.min_jacobian(xhat)
        if not gmin > 0.0:
            raise MappingError(f"mapping is not invertible (min g = {gmin:.3e})")

    def residual(self, U, xhat, mu) -> np.ndarray:
        U, x, mu = self._args(U, xhat, mu)
        self.check_mapping(x)
        return np.asarray(self._residual(U, x, mu))

    def jacobians(self, U, xhat, mu):
        """(dR/dU, dR/dxhat) as CSR matrices."""
        U, x, mu = self._args(U, xhat, mu)
        self.check_mapping(x)
        blocks = self._jac_blocks(U, x, mu)
        ne = self.layout.n_elements
        rows_per = self.layout.nbasis * self.layout.m
        Ju = np.concatenate([np.asarray(blocks[0]).reshape(ne, rows_per, -1),
                             np.asarray(blocks[1]).reshape(ne, rows_per, -1)], axis=2)
        xs = [np.asarray(blocks[2]).reshape(ne, rows_per, -1)]
        if self.viscous:
            xs.append(np.asarray(blocks[3]).reshape(ne, rows_per, -1))
        Jx = np.concatenate(xs, axis=2)
        dRdU = self._to_csr("u", Ju)
        dRdx = self._to_csr("x", Jx)
        return dRdU, dRdx

    def state_jvp(self, U, xhat, mu, V) -> np.ndarray:
        """dR/dU @ V for a dense (N, k) block of directions."""
        U, x, mu = self._args(U, xhat, mu)
        V = jnp.asarray(np.asarray(V, dtype=float).reshape(self.N, -1))
        return np.asarray(self._jvp_state(U, x, mu, V))

    def mapping_jvp(self, U, xhat, mu, D) -> np.ndarray:
        """dR/dxhat @ D for a dense (d Nv, n) block of directions."""
        U, x, mu = self._args(U, xhat, mu)
        D = jnp.asarray(np.asarray(D, dtype=float).reshape(self.n_mapping, -1))
        return np.asarray(self._jvp_map(U, x, mu, D))

    def state_jacobian_product(self, U, xhat, mu, V, jvp_max: int = 24) -> np.ndarray:
        """dR/dU @ V; forward-mode products for few columns, sparse otherwise."""
        V = np.asarray(V, dtype=float).reshape(self.N, -1)
        if V.shape[1] == 0:
            return np.zeros((self.N, 0))
        if V.shape[1] <= jvp_max:
            return self.state_jvp(U, xhat, mu, V)
        return np.asarray(self.jacobians(U, xhat, mu)[0] @ V)

    def mapping_jacobian_product(self, U, xhat, mu, D, jvp_max: int = 24) -> np.ndarray:
        """dR/dxhat @ D for dense or sparse D."""
        if D.shape[1] == 0:
            return np.zeros((self.N, 0))
        if not sp.issparse(D) and D.shape[1] <= jvp_max:
            return self.mapping_jvp(U, xhat, mu, D)
        return np.asarray(self.jacobians(U, xhat, mu)[1] @ D)

    def mass_matrix(self, xhat) -> sp.csr_matrix:
        """Block-diagonal physical-domain mass matrix."""
        xhat = getattr(xhat, "xhat", xhat)
        ne, nb, m = self.layout.n_elements, self.layout.nbasis, self.layout.m
        x = np.asarray(xhat, dtype=float).reshape(-1, self.mesh.dim)[self.mesh.elements]
        Jx = np.transpose(x[:, 1:, :] - x[:, :1, :], (0, 2, 1))
        detx = np.linalg.det(Jx)
        V = self.ref.values(self.vquad.points)
        M0 = np.einsum("q,qa,qb->ab", self.vquad.weights, V, V)
        blocks = detx[:, None, None] * np.kron(M0, np.eye(m))[None]
        return sp.block_diag(list(blocks), format="csr")

    def zero_state(self) -> np.ndarray:
        return np.zeros(self.N)

    def field(self, U) -> StateField:
        return StateField(np.asarray(U, dtype=float).copy(), self.layout)


def assemble_residual(disc: DGDiscretization, U, mapping, mu) -> np.ndarray:
    return disc.residual(U, mapping, mu)


def assemble_jacobians(disc: DGDiscretization, U, mapping, mu):
    return disc.jacobians(U, mapping, mu)


# Linear solves ================================================================
def block_triangular_solve(J: sp.spmatrix, block: int, order: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Solve J y = r by block forward substitution in element ``order``.

    Raises ValueError if J has a nonzero block above the diagonal in that order.
    """
    B = J.tobsr(blocksize=(block, block))
    ne = J.shape[0] // block
    rank = np.empty(ne, dtype=np.int64)
    rank[order] = np.arange(ne)
    ip, ind, data = B.indptr, B.indices, B.data
    rowb = np.repeat(np.arange(ne), np.diff(ip))
    nonzero = np.abs(data).max(axis=(1, 2)) > 0.0
    if np.any(nonzero & (rank[ind] > rank[rowb])):
        raise ValueError("matrix is not block triangular in the given order")
    diag = ind == rowb
    if np.count_nonzero(diag) != ne:
        raise ValueError("missing diagonal blocks")
    Dinv = np.empty((ne, block, block))
    Dinv[rowb[diag]] = np.linalg.inv(data[diag])
    rr = np.asarray(r, dtype=float).reshape(ne, block)
    y = np.zeros((ne, block))
    for K in order:
        s = rr[K].copy()
        for j in range(ip[K], ip[K + 1]):
            c = ind[j]
            if c != K and nonzero[j]:
                s -= data[j] @ y[c]
        y[K] = Dinv[K] @ s
    return y.ravel()


def linear_solve(disc: "DGDiscretization", A: sp.spmatrix, r: np.ndarray, xhat, mu) -> np.ndarray:
    """Direct solve, using block forward substitution when the law supplies
    an ordering that makes A block triangular."""
    x = np.asarray(getattr(xhat, "xhat", xhat), dtype=float).reshape(-1, disc.mesh.dim)
    order = disc.law.element_order(x[disc.mesh.elements].mean(axis=1), mu)
    if order is not None:
        try:
            return block_triangular_solve(A, disc.layout.nbasis * disc.layout.m, order, r)
        except ValueError:
            log.debug("block triangular solve unavailable, falling back to LU")
    return spla.spsolve(A.tocsc(), r)


# Newton solver ================================================================
@dataclass
class HdmResult:
    U: np.ndarray
    residual_norm: float
    iterations: int
    history: list


def solve_hdm(disc: DGDiscretization, mapping, mu, U0=None, rtol: float = 1e-10,
              max_iter: int = 50, ptc_dt: float | None = None, ptc_growth: float = 2.0,
              dt_max: float = 1e12) -> HdmResult:
    """Damped Newton on R(U; mapping, mu) = 0.

    With ``ptc_dt`` set, pseudo-transient continuation (M/dt + dR/dU) is used
    and dt grows by switched evolution relaxation until a pure Newton step is
    taken. Convergence: ||R|| <= rtol * max(1, ||R(U0)||).
    """
    xhat = getattr(mapping, "xhat", mapping)
    disc.check_mapping(xhat)
    U = disc.zero_state() if U0 is None else np.array(getattr(U0, "coefficients", U0), dtype=float)
    R = disc.residual(U, xhat, mu)
    r0 = rnorm = float(np.linalg.norm(R))
    tol = rtol * max(1.0, r0)
    history = [rnorm]
    dt = ptc_dt
    M = disc.mass_matrix(xhat) if ptc_dt is not None else None
    it = 0
    while rnorm > tol:
        if it >= max_iter:
            raise HdmSolveError(f"Newton stagnated: ||R|| = {rnorm:.3e} after {it} iterations")
        it += 1
        J, _ = disc.jacobians(U, xhat, mu)
        A = J if dt is None or dt >= dt_max else (J + M / dt).tocsc()
        dU = linear_solve(disc, A, -R, xhat, mu)
        if not np.all(np.isfinite(dU)):
            raise HdmSolveError("linear solve produced non-finite update")
        alpha = 1.0
        for _ in range(30):
            Ut = U + alpha * dU
            if disc.law.admissible(Ut.reshape(disc.layout.n_elements, disc.layout.nbasis, -1)):
                Rt = disc.residual(Ut, xhat, mu)
                rt = float(np.linalg.norm(Rt))
                if np.isfinite(rt) and (rt < rnorm or (dt is not None and dt < dt_max and rt < 10 * rnorm)):
                    break
            alpha *= 0.5
        else:
            if dt is not None and dt < dt_max:
                dt = max(dt / 10.0, 1e-12)
                log.debug("PTC step rejected, dt -> %.3e", dt)
                continue
            raise HdmSolveError(f"line search failed at ||R|| = {rnorm:.3e}")
        if dt is not None and dt < dt_max:
            dt = min(dt * max(ptc_growth * alpha, 0.5) * max(rnorm / max(rt, 1e-300), 1.0), dt_max)
        U, R, rnorm = Ut, Rt, rt
        history.append(rnorm)
        log.debug("newton %d |R|=%.3e alpha=%.3g dt=%s", it, rnorm, alpha, dt)
    return HdmResult(U, rnorm, it, history)
