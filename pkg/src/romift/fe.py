"""Reference-domain meshes, nodal reference elements, quadrature and the
coefficient-vector <-> field encoding used by the DG state space."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import roots_jacobi

SEGMENT = "segment"
TRIANGLE = "triangle"

_MEASURE = {SEGMENT: 1.0, TRIANGLE: 0.5}


# Quadrature ==================================================================
@dataclass(frozen=True)
class QuadratureRule:
    shape: str
    order: int
    points: np.ndarray  # (nq, dim) master-element coordinates
    weights: np.ndarray  # (nq,)


def _gauss_legendre01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def quadrature_for(shape: str, order: int) -> QuadratureRule:
    """Quadrature rule on the master element exact for polynomials of total
    degree ``order``.

    The segment is [0, 1]; the triangle is the unit right triangle
    (0,0)-(1,0)-(0,1). Triangle rules are collapsed (Duffy) tensor products of
    Gauss-Jacobi and Gauss-Legendre points, so any order is available.
    """
    order = int(order)
    if order < 1:
        raise ValueError(f"quadrature order must be >= 1, got {order}")
    n = order // 2 + 1
    if shape == SEGMENT:
        x, w = _gauss_legendre01(n)
        return QuadratureRule(shape, order, x[:, None], w)
    if shape == TRIANGLE:
        # weight (1 - s) on [0, 1] absorbs the collapse Jacobian
        xs, ws = roots_jacobi(n, 1.0, 0.0)
        s = 0.5 * (xs + 1.0)
        ws = 0.25 * ws
        t, wt = _gauss_legendre01(n)
        S, T = np.meshgrid(s, t, indexing="ij")
        pts = np.column_stack([S.ravel(), (T * (1.0 - S)).ravel()])
        wts = np.outer(ws, wt).ravel()
        return QuadratureRule(shape, order, pts, wts)
    raise ValueError(f"unsupported shape {shape!r}")


# Reference elements ===========================================================
def _exponents(dim, p):
    if dim == 1:
        return [(a,) for a in range(p + 1)]
    return [(a, b) for a in range(p + 1) for b in range(p + 1 - a)]


def _equispaced_nodes(shape, p):
    if shape == SEGMENT:
        if p == 0:
            return np.array([[0.5]])
        return (np.arange(p + 1) / p)[:, None]
    if p == 0:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]])
    # vertices first, then the rest in lexicographic order
    pts = [(i / p, j / p) for j in range(p + 1) for i in range(p + 1 - j)]
    verts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    rest = [q for q in pts if q not in verts]
    return np.array(verts + rest)


class ReferenceElement:
    """Lagrange element on equispaced nodes of the master segment/triangle.

    Degree 0 is the constant (finite-volume) element. Faces are numbered so
    that face ``i`` of a triangle joins vertices ``(i, i+1 mod 3)``.
    """

    def __init__(self, shape: str, degree: int):
        if shape not in _MEASURE:
            raise ValueError(f"unsupported shape {shape!r}")
        if degree < 0:
            raise ValueError("degree must be >= 0")
        self.shape = shape
        self.degree = int(degree)
        self.dim = 1 if shape == SEGMENT else 2
        self.nodes = _equispaced_nodes(shape, self.degree)
        self._exps = np.array(_exponents(self.dim, self.degree))
        self._coef = np.linalg.inv(self._monomials(self.nodes))
        self.nbasis = len(self.nodes)

    @property
    def measure(self) -> float:
        return _MEASURE[self.shape]

    def _monomials(self, pts):
        pts = np.atleast_2d(pts)
        return np.prod(pts[:, None, :] ** self._exps[None, :, :], axis=2)

    def _monomial_grads(self, pts):
        pts = np.atleast_2d(pts)
        out = np.zeros((len(pts), len(self._exps), self.dim))
        for k in range(self.dim):
            e = self._exps.copy()
            fac = e[:, k].astype(float)
            e[:, k] = np.maximum(e[:, k] - 1, 0)
            out[:, :, k] = fac * np.prod(pts[:, None, :] ** e[None, :, :], axis=2)
        return out

    def values(self, pts) -> np.ndarray:
        """Basis values, shape (npts, nbasis)."""
        return self._monomials(pts) @ self._coef

    def grads(self, pts) -> np.ndarray:
        """Master-coordinate basis gradients, shape (npts, nbasis, dim)."""
        return np.einsum("pmk,mb->pbk", self._monomial_grads(pts), self._coef)

    # faces ------------------------------------------------------------------
    @property
    def nfaces(self) -> int:
        return 2 if self.shape == SEGMENT else 3

    def face_vertices(self, f):
        if self.shape == SEGMENT:
            return (f,)
        return (f, (f + 1) % 3)

    def face_normal(self, f) -> np.ndarray:
        """Outward unit normal of master face ``f``."""
        if self.shape == SEGMENT:
            return np.array([-1.0 if f == 0 else 1.0])
        return np.array([[0.0, -1.0], [1.0, 1.0], [-1.0, 0.0]])[f] / np.array(
            [1.0, np.sqrt(2.0), 1.0]
        )[f]

    def face_quadrature(self, f, order):
        """Master points and weights (scaled by master face measure)."""
        if self.shape == SEGMENT:
            return np.array([[float(f)]]), np.array([1.0])
        t, w = _gauss_legendre01(int(order) // 2 + 1)
        verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        a, b = verts[f], verts[(f + 1) % 3]
        return a + t[:, None] * (b - a), w * np.linalg.norm(b - a)


# Mesh =========================================================================
@dataclass
class Mesh:
    """Simplicial mesh of the reference domain with q = 1 geometry.

    ``boundary_faces`` rows are ``(element, local face, surface id)`` with
    surface ids numbered from 0.
    """

    dim: int
    nodes: np.ndarray  # (Nv, dim)
    elements: np.ndarray  # (ne, dim + 1)
    boundary_faces: np.ndarray  # (nbf, 3)
    geom_degree: int = 1
    n_surfaces: int = field(default=0)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, self.dim)
        self.elements = np.asarray(self.elements, dtype=np.int64)
        self.boundary_faces = np.asarray(self.boundary_faces, dtype=np.int64).reshape(-1, 3)
        if self.geom_degree != 1:
            raise NotImplementedError("only straight-sided (q = 1) meshes are supported")
        if self.elements.min() < 0 or self.elements.max() >= len(self.nodes):
            raise ValueError("element connectivity references missing nodes")
        if self.n_surfaces == 0 and len(self.boundary_faces):
            self.n_surfaces = int(self.boundary_faces[:, 2].max()) + 1
        if len(self.boundary_faces) and self.boundary_faces[:, 2].max() >= self.n_surfaces:
            raise ValueError("boundary face tagged with an undeclared surface")
        if np.any(self.element_dets() <= 0.0):
            raise ValueError("mesh has non-positive element Jacobians")

    @property
    def shape(self) -> str:
        return SEGMENT if self.dim == 1 else TRIANGLE

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def element_jacobians(self) -> np.ndarray:
        """Affine master-to-reference Jacobians dX/dxi, shape (ne, d, d)."""
        X = self.nodes[self.elements]  # (ne, d+1, d)
        return np.transpose(X[:, 1:, :] - X[:, :1, :], (0, 2, 1))

    def element_dets(self) -> np.ndarray:
        return np.linalg.det(self.element_jacobians())

    def element_volumes(self) -> np.ndarray:
        return self.element_dets() * _MEASURE[self.shape]

    def surface_nodes(self, surface: int) -> np.ndarray:
        ref = ReferenceElement(self.shape, 1)
        out = set()
        for e, f, s in self.boundary_faces:
            if s == surface:
                out.update(int(self.elements[e, v]) for v in ref.face_vertices(f))
        return np.array(sorted(out), dtype=np.int64)

    def face_neighbors(self) -> np.ndarray:
        """Neighbor element across each local face, -1 on the boundary."""
        ref = ReferenceElement(self.shape, 1)
        owner = {}
        nbr = -np.ones((self.n_elements, ref.nfaces), dtype=np.int64)
        for e, conn in enumerate(self.elements):
            for f in range(ref.nfaces):
                key = tuple(sorted(int(conn[v]) for v in ref.face_vertices(f)))
                if key in owner:
                    e2, f2 = owner.pop(key)
                    nbr[e, f], nbr[e2, f2] = e2, e
                else:
                    owner[key] = (e, f)
        return nbr

    # persistence ------------------------------------------------------------
    def save(self, path) -> None:
        """Plain-text format: header ``dim q n_nodes n_elems n_bfaces`` then
        node coordinates, connectivity and boundary faces, one per line."""
        lines = [f"{self.dim} {self.geom_degree} {self.n_nodes} {self.n_elements} "
                 f"{len(self.boundary_faces)}"]
        lines += [" ".join(repr(float(v)) for v in x) for x in self.nodes]
        lines += [" ".join(str(int(v)) for v in c) for c in self.elements]
        lines += [" ".join(str(int(v)) for v in b) for b in self.boundary_faces]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "Mesh":
        rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
        dim, q, nn, ne, nb = (int(v) for v in rows[0])
        nodes = np.array(rows[1:1 + nn], dtype=float)
        elems = np.array(rows[1 + nn:1 + nn + ne], dtype=np.int64)
        bf = np.array(rows[1 + nn + ne:1 + nn + ne + nb], dtype=np.int64).reshape(-1, 3)
        return cls(dim, nodes, elems, bf, geom_degree=q)


def build_structured_mesh(lower, upper, nx: int, ny: int | None = None, degree: int = 1) -> Mesh:
    """Uniform mesh of an interval or an axis-aligned box (``ny`` defaults to ``nx``).

    1D surfaces: 0 = left, 1 = right. 2D surfaces: 0 = bottom, 1 = right,
    2 = top, 3 = left. Each box cell is split along its lower-left to
    upper-right diagonal.
    """
    if degree != 1:
        raise NotImplementedError("only q = 1 geometry is supported")
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    if nx < 1 or (ny is not None and ny < 1):
        raise ValueError("mesh needs at least one cell per direction")
    if np.any(upper <= lower):
        raise ValueError("degenerate domain")
    if lower.size == 2 and ny is None:
        ny = nx
    if lower.size == 1:
        x = np.linspace(lower[0], upper[0], nx + 1)
        elems = np.column_stack([np.arange(nx), np.arange(1, nx + 1)])
        bf = [(0, 0, 0), (nx - 1, 1, 1)]
        return Mesh(1, x[:, None], elems, bf, n_surfaces=2)
    xs = np.linspace(lower[0], upper[0], nx + 1)
    ys = np.linspace(lower[1], upper[1], ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    idx = lambda i, j: j * (nx + 1) + i  # noqa: E731
    elems, bf = [], []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            e = len(elems)
            elems.append((a, b, c))  # faces: ab bottom, bc right, ca diagonal
            elems.append((a, c, d))  # faces: ac diagonal, cd top, da left
            if j == 0:
                bf.append((e, 0, 0))
            if i == nx - 1:
                bf.append((e, 1, 1))
            if j == ny - 1:
                bf.append((e + 1, 1, 2))
            if i == 0:
                bf.append((e + 1, 2, 3))
    return Mesh(2, nodes, elems, bf, n_surfaces=4)


# State fields =================================================================
@dataclass(frozen=True)
class StateLayout:
    """Element-major, then local node, then component."""

    n_elements: int
    nbasis: int
    m: int

    @property
    def size(self) -> int:
        return self.n_elements * self.nbasis * self.m


@dataclass(frozen=True)
class StateField:
    coefficients: np.ndarray
    layout: StateLayout

    def __post_init__(self):
        if self.coefficients.shape != (self.layout.size,):
            raise ValueError(
                f"coefficient vector of length {self.coefficients.shape} does not "
                f"match layout size {self.layout.size}")

    def blocks(self) -> np.ndarray:
        L = self.layout
        return self.coefficients.reshape(L.n_elements, L.nbasis, L.m)


def dof_coordinates(mesh: Mesh, ref: ReferenceElement) -> np.ndarray:
    """Reference-domain coordinates of every element's nodal points,
    shape (ne, nbasis, d)."""
    X0 = mesh.nodes[mesh.elements[:, 0]]
    return X0[:, None, :] + np.einsum("eij,bj->ebi", mesh.element_jacobians(), ref.nodes)


def encode(func, mesh: Mesh, ref: ReferenceElement, m: int = 1) -> StateField:
    """Nodal interpolant of ``func(X) -> (..., m)`` in the DG space."""
    X = dof_coordinates(mesh, ref)
    vals = np.asarray(func(X.reshape(-1, mesh.dim)), dtype=float).reshape(
        mesh.n_elements, ref.nbasis, m)
    return StateField(vals.ravel(), StateLayout(mesh.n_elements, ref.nbasis, m))


def decode(field_: StateField, ref: ReferenceElement, element, points) -> np.ndarray:
    """Field values at master ``points`` of ``element``, shape (npts, m)."""
    if field_.layout.nbasis != ref.nbasis:
        raise ValueError("layout does not match reference element")
    return ref.values(points) @ field_.blocks()[element]


def locate_points(mesh: Mesh, pts, tol=1e-12):
    """Element index and master coordinates for reference-domain points."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    J = mesh.element_jacobians()
    Jinv = np.linalg.inv(J)
    X0 = mesh.nodes[mesh.elements[:, 0]]
    elems = np.empty(len(pts), dtype=np.int64)
    xis = np.empty_like(pts)
    for i, p in enumerate(pts):
        xi = np.einsum("eij,ej->ei", Jinv, p[None, :] - X0)
        bary = np.column_stack([1.0 - xi.sum(axis=1), xi])
        e = int(np.argmax(bary.min(axis=1)))
        if bary[e].min() < -tol * 1e4:
            raise ValueError(f"point {p} lies outside the mesh")
        elems[i], xis[i] = e, xi[e]
    return elems, xis

