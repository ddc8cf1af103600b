import numpy as np
import pytest

from romift.fe import (SEGMENT, TRIANGLE, Mesh, ReferenceElement, StateField, StateLayout,
                       build_structured_mesh, decode, dof_coordinates, encode, locate_points,
                       quadrature_for)


@pytest.mark.parametrize("order", [1, 2, 5, 8])
def test_segment_quadrature_exact(order):
    q = quadrature_for(SEGMENT, order)
    for k in range(order + 1):
        assert np.isclose(q.weights @ q.points[:, 0] ** k, 1.0 / (k + 1), atol=1e-14)


@pytest.mark.parametrize("order", [1, 3, 6, 9])
def test_triangle_quadrature_exact(order):
    from math import factorial
    q = quadrature_for(TRIANGLE, order)
    for a in range(order + 1):
        for b in range(order + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            val = q.weights @ (q.points[:, 0] ** a * q.points[:, 1] ** b)
            assert np.isclose(val, exact, rtol=1e-12, atol=1e-15)


def test_quadrature_bad_input():
    with pytest.raises(ValueError):
        quadrature_for(SEGMENT, 0)
    with pytest.raises(ValueError):
        quadrature_for("quad", 2)


@pytest.mark.parametrize("shape,p", [(SEGMENT, 0), (SEGMENT, 3), (TRIANGLE, 1), (TRIANGLE, 3)])
def test_reference_element_nodal_and_partition_of_unity(shape, p):
    ref = ReferenceElement(shape, p)
    assert np.allclose(ref.values(ref.nodes), np.eye(ref.nbasis), atol=1e-12)
    pts = quadrature_for(shape, 4).points
    assert np.allclose(ref.values(pts).sum(axis=1), 1.0)
    assert np.allclose(ref.grads(pts).sum(axis=1), 0.0, atol=1e-11)


def test_reference_gradient_matches_finite_difference():
    ref = ReferenceElement(TRIANGLE, 3)
    x = np.array([[0.21, 0.33]])
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (ref.values(x + e) - ref.values(x - e)) / (2 * h)
        assert np.allclose(ref.grads(x)[..., k], fd, atol=1e-8)


def test_structured_meshes():
    m1 = build_structured_mesh([0.0], [2.0], 8)
    assert m1.dim == 1 and m1.n_elements == 8
    assert np.isclose(m1.element_volumes().sum(), 2.0)
    m2 = build_structured_mesh([0.0, 0.0], [1.0, 2.0], 3, 4)
    assert m2.n_elements == 24
    assert np.all(m2.element_dets() > 0)
    assert np.isclose(m2.element_volumes().sum(), 2.0)
    # surface ids: 0 bottom, 1 right, 2 top, 3 left
    assert np.allclose(m2.nodes[m2.surface_nodes(0), 1], 0.0)
    assert np.allclose(m2.nodes[m2.surface_nodes(1), 0], 1.0)
    assert np.allclose(m2.nodes[m2.surface_nodes(2), 1], 2.0)
    assert np.allclose(m2.nodes[m2.surface_nodes(3), 0], 0.0)


def test_face_neighbors_symmetric():
    m = build_structured_mesh([0.0, 0.0], [1.0, 1.0], 3)
    nb = m.face_neighbors()
    for e in range(m.n_elements):
        for f in range(3):
            o = nb[e, f]
            if o >= 0:
                assert e in nb[o]
    assert np.sum(nb < 0) == len(m.boundary_faces)


def test_mesh_save_load_roundtrip(tmp_path):
    m = build_structured_mesh([0.0, 0.0], [1.0, 1.0], 2)
    m.save(tmp_path / "mesh.txt")
    header = (tmp_path / "mesh.txt").read_text().splitlines()[0].split()
    assert header == ["2", "1", str(m.n_nodes), str(m.n_elements), str(len(m.boundary_faces))]
    m2 = Mesh.load(tmp_path / "mesh.txt")
    assert np.array_equal(m2.nodes, m.nodes)
    assert np.array_equal(m2.elements, m.elements)
    assert np.array_equal(m2.boundary_faces, m.boundary_faces)


def test_encode_decode_reproduces_polynomials():
    m = build_structured_mesh([0.0, 0.0], [1.0, 1.0], 2)
    ref = ReferenceElement(TRIANGLE, 2)
    f = lambda X: np.stack([1 + X[:, 0] ** 2 - X[:, 0] * X[:, 1], X[:, 1]], axis=-1)
    fld = encode(f, m, ref, m=2)
    pts = np.array([[0.3, 0.6], [0.71, 0.12]])
    elems, xis = locate_points(m, pts)
    for p, e, xi in zip(pts, elems, xis):
        assert np.allclose(decode(fld, ref, e, xi[None]), f(p[None]), atol=1e-12)


def test_state_field_size_check():
    with pytest.raises(ValueError):
        StateField(np.zeros(5), StateLayout(2, 3, 1))


def test_locate_points_outside():
    m = build_structured_mesh([0.0, 0.0], [1.0, 1.0], 2)
    with pytest.raises(ValueError):
        locate_points(m, [[1.5, 0.5]])


def test_dof_coordinates_inside_elements():
    m = build_structured_mesh([0.0], [1.0], 4)
    X = dof_coordinates(m, ReferenceElement(SEGMENT, 2))[..., 0]
    assert np.allclose(X[:, 0], m.nodes[m.elements[:, 0], 0])
    assert np.allclose(X[:, -1], m.nodes[m.elements[:, 1], 0])
