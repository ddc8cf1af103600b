"""Finite-element domain mappings, the boundary-preserving constraint map,
mesh distortion, and low-dimensional affine families of mappings."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations

import jax
import jax.numpy as jnp
import numpy as np
import scipy.sparse as sp

from .fe import Mesh, ReferenceElement, quadrature_for

jax.config.update("jax_enable_x64", True)

log = logging.getLogger(__name__)

DISTORTION_EPS = 1e-8


# Mappings =====================================================================
@dataclass(frozen=True)
class DomainMapping:
    """Nodal coefficients of a q = 1 mapping of the reference mesh."""

    mesh: Mesh
    xhat: np.ndarray  # (Nv * d,), node-major

    def __post_init__(self):
        x = np.asarray(self.xhat, dtype=float).ravel()
        if x.size != self.mesh.n_nodes * self.mesh.dim:
            raise ValueError(f"expected {self.mesh.n_nodes * self.mesh.dim} mapping "
                             f"coefficients, got {x.size}")
        object.__setattr__(self, "xhat", x)

    @classmethod
    def identity(cls, mesh: Mesh) -> "DomainMapping":
        return cls(mesh, mesh.nodes.ravel().copy())

    @property
    def nodes(self) -> np.ndarray:
        return self.xhat.reshape(-1, self.mesh.dim)

    def min_jacobian(self) -> float:
        """Smallest g over all elements (constant per element for q = 1)."""
        return float(np.min(element_mapping_dets(self.mesh, self.xhat)))

    def is_invertible(self) -> bool:
        return self.min_jacobian() > 0.0


def element_mapping_dets(mesh: Mesh, xhat) -> np.ndarray:
    x = np.asarray(xhat, dtype=float).reshape(-1, mesh.dim)[mesh.elements]
    Jx = np.transpose(x[:, 1:, :] - x[:, :1, :], (0, 2, 1))
    return np.linalg.det(Jx) / mesh.element_dets()


def evaluate_mapping(mapping: DomainMapping, element: int, points):
    """Physical points, mapping Jacobian G = dx/dX and g = det G at master
    ``points`` of ``element``."""
    mesh = mapping.mesh
    ref = ReferenceElement(mesh.shape, 1)
    pts = np.atleast_2d(points)
    xK = mapping.nodes[mesh.elements[element]]
    x = ref.values(pts) @ xK
    Jx = np.einsum("ai,pak->pik", xK, ref.grads(pts))
    G = Jx @ np.linalg.inv(mesh.element_jacobians()[element])
    return x, G, np.linalg.det(G)


# Boundary constraint map ======================================================
INTERIOR, SLIDING, FIXED = "interior", "sliding", "fixed"


@dataclass(frozen=True)
class BoundaryConstraintMap:
    """Affine map x = T y + x0 from unconstrained to nodal coordinates.

    Sliding nodes keep the components listed in ``free[I]``; the remaining
    ones are solved from the planes the node lies on. Fixed nodes sit on at
    least ``d`` independent planes.
    """

    dim: int
    kinds: tuple
    free: tuple  # per node: tuple of free component indices (J_I)
    surfaces: tuple  # per node: tuple of surface ids (I_I)
    planes: dict  # surface id -> (unit normal, offset)
    T: sp.csr_matrix  # (d Nv, Nu)
    x0: np.ndarray  # (d Nv,)

    @property
    def n_unconstrained(self) -> int:
        return self.T.shape[1]

    def apply(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float).ravel()
        if y.size != self.n_unconstrained:
            raise ValueError(f"expected {self.n_unconstrained} unconstrained dofs, got {y.size}")
        return self.T @ y + self.x0

    def restrict(self, xhat) -> np.ndarray:
        """Unconstrained components of a nodal coordinate vector."""
        xhat = np.asarray(xhat, dtype=float).reshape(-1, self.dim)
        return np.concatenate([xhat[i, list(J)] for i, J in enumerate(self.free)]) \
            if self.n_unconstrained else np.zeros(0)

    def plane_residuals(self, xhat) -> np.ndarray:
        xhat = np.asarray(xhat, dtype=float).reshape(-1, self.dim)
        out = []
        for i, surfs in enumerate(self.surfaces):
            for s in surfs:
                n, b = self.planes[s]
                out.append(n @ xhat[i] - b)
        return np.array(out)


def build_boundary_constraint(mesh: Mesh, planes: dict, tol: float = 1e-10) -> BoundaryConstraintMap:
    """Constraint map for planar boundary surfaces.

    ``planes`` maps each surface id to ``(normal, offset)`` describing
    ``normal . x = offset``.
    """
    d = mesh.dim
    planes = {int(s): (np.asarray(n, dtype=float) / np.linalg.norm(n),
                       float(b) / np.linalg.norm(n)) for s, (n, b) in planes.items()}
    missing = set(range(mesh.n_surfaces)) - set(planes)
    if missing:
        raise ValueError(f"no plane descriptor for boundary surfaces {sorted(missing)}")
    node_surfs = [set() for _ in range(mesh.n_nodes)]
    for s in range(mesh.n_surfaces):
        for i in mesh.surface_nodes(s):
            node_surfs[i].add(s)

    kinds, free, surfaces = [], [], []
    rows, cols, vals = [], [], []
    x0 = np.zeros(d * mesh.n_nodes)
    col = 0
    for i, X in enumerate(mesh.nodes):
        surfs = tuple(sorted(node_surfs[i]))
        surfaces.append(surfs)
        for s in surfs:
            n, b = planes[s]
            if abs(n @ X - b) > tol:
                raise ValueError(f"node {i} at {X} does not lie on surface {s}")
        if not surfs:
            kinds.append(INTERIOR)
            free.append(tuple(range(d)))
            for k in range(d):
                rows.append(d * i + k), cols.append(col + k), vals.append(1.0)
            col += d
            continue
        N = np.array([planes[s][0] for s in surfs])  # (k, d)
        B = np.array([planes[s][1] for s in surfs])
        if np.linalg.matrix_rank(N, tol=1e-12) < min(len(surfs), d):
            raise ValueError(f"dependent boundary normals at node {i}")
        if len(surfs) >= d:
            kinds.append(FIXED)
            free.append(())
            x0[d * i:d * i + d] = np.linalg.lstsq(N, B, rcond=None)[0]
            continue
        # drop the components whose normal submatrix is best conditioned;
        # with one plane this is the largest-magnitude normal entry
        best = max(combinations(range(d), len(surfs)),
                   key=lambda c: abs(np.linalg.det(N[:, list(c)])))
        J = tuple(k for k in range(d) if k not in best)
        kinds.append(SLIDING)
        free.append(J)
        Nd, Nf = N[:, list(best)], N[:, list(J)]
        Ndinv = np.linalg.inv(Nd)
        # x_drop = Nd^{-1} (B - Nf y)
        x0[[d * i + k for k in best]] = Ndinv @ B
        A = -Ndinv @ Nf
        for a, k in enumerate(J):
            rows.append(d * i + k), cols.append(col + a), vals.append(1.0)
            for r, kd in enumerate(best):
                rows.append(d * i + kd), cols.append(col + a), vals.append(A[r, a])
        col += len(J)
    T = sp.csr_matrix((vals, (rows, cols)), shape=(d * mesh.n_nodes, col))
    return BoundaryConstraintMap(d, tuple(kinds), tuple(free), tuple(surfaces), planes, T, x0)


def apply_chi(chi: BoundaryConstraintMap, y):
    """Nodal coordinates and the constant Jacobian d xhat / d y."""
    return chi.apply(y), chi.T


def box_planes(lower, upper) -> dict:
    """Plane descriptors matching :func:`romift.fe.build_structured_mesh`."""
    lower, upper = np.atleast_1d(lower), np.atleast_1d(upper)
    if lower.size == 1:
        return {0: ([1.0], lower[0]), 1: ([1.0], upper[0])}
    return {0: ([0.0, 1.0], lower[1]), 1: ([1.0, 0.0], upper[0]),
            2: ([0.0, 1.0], upper[1]), 3: ([1.0, 0.0], lower[0])}


# Distortion ===================================================================
class Distortion:
    """Elementwise distortion eta_K = int_K (|G|_F^2 / max(g, eps)^(2/d))^2 dV."""

    def __init__(self, mesh: Mesh, eps: float = DISTORTION_EPS):
        if eps <= 0:
            raise ValueError("eps must be positive")
        self.mesh, self.eps = mesh, eps
        ref = ReferenceElement(mesh.shape, 1)
        quad = quadrature_for(mesh.shape, 2)
        self._dpsi = jnp.asarray(ref.grads(quad.points))  # (nq, nv, d)
        self._w = jnp.asarray(quad.weights)
        self._JXinv = jnp.asarray(np.linalg.inv(mesh.element_jacobians()))
        self._detJX = jnp.asarray(mesh.element_dets())
        self._conn = mesh.elements
        d = mesh.dim

        def eta_K(xK, JXinv, detJX):
            Jx = jnp.einsum("ai,qak->qik", xK, self._dpsi)
            G = Jx @ JXinv
            g = jnp.linalg.det(G)
            fro2 = jnp.sum(G * G, axis=(1, 2))
            ratio = fro2 / jnp.maximum(g, eps) ** (2.0 / d)
            return jnp.sum(self._w * detJX * ratio ** 2)

        self._eta = jax.jit(jax.vmap(eta_K))
        self._deta = jax.jit(jax.vmap(jax.grad(eta_K)))

    def _xK(self, xhat):
        return jnp.asarray(np.asarray(xhat, dtype=float).reshape(-1, self.mesh.dim)[self._conn])

    def __call__(self, xhat) -> np.ndarray:
        return np.asarray(self._eta(self._xK(xhat), self._JXinv, self._detJX))

    def gradient(self, xhat) -> sp.csr_matrix:
        """Sparse d eta / d xhat, shape (n_elements, d Nv)."""
        d = self.mesh.dim
        blocks = np.asarray(self._deta(self._xK(xhat), self._JXinv, self._detJX))
        ne, nv = self._conn.shape
        rows = np.repeat(np.arange(ne), nv * d)
        cols = (d * self._conn[:, :, None] + np.arange(d)[None, None, :]).ravel()
        return sp.csr_matrix((blocks.ravel(), (rows, cols)),
                             shape=(ne, d * self.mesh.n_nodes))


def distortion(mapping: DomainMapping, eps: float = DISTORTION_EPS) -> np.ndarray:
    return Distortion(mapping.mesh, eps)(mapping.xhat)


def distortion_gradient(mapping: DomainMapping, eps: float = DISTORTION_EPS) -> sp.csr_matrix:
    return Distortion(mapping.mesh, eps).gradient(mapping.xhat)


# Affine families of mappings ==================================================
class MappingFamily:
    """Mappings xhat(c) = base + D c with a constant direction matrix ``D``.

    Every parametrization used here (reduced POD space, full unconstrained
    space, analytic one-parameter families) is affine in its coordinates.
    """

    def __init__(self, mesh: Mesh, base, directions):
        self.mesh = mesh
        self.base = np.asarray(base, dtype=float).ravel()
        self.directions = directions if sp.issparse(directions) else np.asarray(
            directions, dtype=float).reshape(self.base.size, -1)

    @property
    def n(self) -> int:
        return self.directions.shape[1]

    def nodes(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float).ravel()
        if c.size != self.n:
            raise ValueError(f"expected {self.n} mapping coordinates, got {c.size}")
        return self.base + (self.directions @ c if self.n else 0.0)

    def mapping(self, c) -> DomainMapping:
        return DomainMapping(self.mesh, self.nodes(c))

    def dense_directions(self) -> np.ndarray:
        D = self.directions
        return D.toarray() if sp.issparse(D) else D


class FullMappingSpace(MappingFamily):
    """All unconstrained dofs: xhat(c) = chi(y0 + c)."""

    def __init__(self, mesh: Mesh, chi: BoundaryConstraintMap, y0=None):
        self.chi = chi
        self.y0 = chi.restrict(mesh.nodes) if y0 is None else np.asarray(y0, dtype=float)
        super().__init__(mesh, chi.apply(self.y0), chi.T)

    def y(self, c) -> np.ndarray:
        return self.y0 + np.asarray(c, dtype=float).ravel()


class ReducedMappingSpace(MappingFamily):
    """xhat(c) = chi(y1 + Psi c) with orthonormal Psi."""

    def __init__(self, mesh: Mesh, chi: BoundaryConstraintMap, y1, Psi, status="ok"):
        self.chi = chi
        self.y1 = np.asarray(y1, dtype=float).ravel()
        self.Psi = np.asarray(Psi, dtype=float).reshape(self.y1.size, -1)
        self.status = status
        super().__init__(mesh, chi.apply(self.y1), chi.T @ self.Psi)

    def y(self, c) -> np.ndarray:
        return self.y1 + (self.Psi @ np.asarray(c, dtype=float).ravel() if self.n else 0.0)

    def coordinates(self, y) -> np.ndarray:
        """Least-squares coordinates of unconstrained dofs ``y``."""
        return self.Psi.T @ (np.asarray(y, dtype=float) - self.y1)


def build_reduced_mapping_basis(mesh: Mesh, chi: BoundaryConstraintMap, ys, n: int | None = None,
                                rtol: float = 1e-12) -> ReducedMappingSpace:
    """POD of the mapping snapshots ys[i] - ys[0], i >= 1.

    Requests beyond the numerical rank are truncated with a warning and
    ``status='rank-truncated'``.
    """
    ys = [np.asarray(y, dtype=float).ravel() for y in ys]
    if not ys:
        raise ValueError("need at least one mapping snapshot")
    M = len(ys)
    n = M - 1 if n is None else int(n)
    if n > M - 1:
        raise ValueError(f"n' = {n} exceeds the {M - 1} available difference snapshots")
    if n == 0:
        return ReducedMappingSpace(mesh, chi, ys[0], np.zeros((ys[0].size, 0)))
    D = np.column_stack([y - ys[0] for y in ys[1:]])
    U, s, _ = np.linalg.svd(D, full_matrices=False)
    rank = int(np.sum(s > rtol * max(s[0], 1e-300))) if s.size else 0
    status = "ok"
    if n > rank:
        warnings.warn(f"mapping basis truncated to rank {rank} (requested {n})")
        status, n = "rank-truncated", rank
    return ReducedMappingSpace(mesh, chi, ys[0], U[:, :n], status=status)


def reduced_mapping(space: ReducedMappingSpace, c) -> DomainMapping:
    return space.mapping(c)
