import math

import mpmath
import numpy as np
import pytest

from romift.fe import build_structured_mesh
from romift.hdm import DGDiscretization, solve_hdm
from romift.metrics import jump_locator
from romift.problems import (AdvectionReaction, NozzleFlow, advec_mesh, advec_react_data, advec_slice,
                             centroid_first, cutoff_gaussian, nozzle_area, nozzle_data,
                             nozzle_initial_state, nozzle_mesh, nozzle_shock_position, onepar_mapping,
                             quad_bijection, quad_bijection_inverse, shock_family, stagnation_pressure,
                             steepening_gaussian, steepening_map, track_shock)


def test_cutoff_gaussian_examples():
    assert cutoff_gaussian(0.5, (0.3, 0.4, -0.1)) == 0.0
    assert cutoff_gaussian(0.0, (2.0, 1.0, 0.0)) == 2.0
    assert np.isclose(cutoff_gaussian(-1.0, (1.0, 1.0, 0.0)), float(mpmath.exp(-1)), rtol=1e-15)
    with pytest.raises(ValueError):
        cutoff_gaussian(0.0, (1.0, 0.0, 0.0))


def test_quad_bijection():
    X = np.linspace(-1, 1, 11)
    assert np.array_equal(quad_bijection(X, 0.0), X)
    for tau in (-0.45, 0.1, 0.4, 0.6):
        assert np.allclose(quad_bijection(np.array([-1.0, 1.0]), tau), [-1.0, 1.0])
    assert np.isclose(quad_bijection(0.0, 0.4), 0.4)
    for tau in (-0.49, -0.2, 0.3, 0.49):
        x = np.linspace(-1, 1, 101)
        assert np.allclose(quad_bijection(quad_bijection_inverse(x, tau), tau), x, atol=1e-12)
    with pytest.raises(ValueError):
        quad_bijection_inverse(0.0, 0.5)
    with pytest.raises(ValueError):
        quad_bijection(0.0, 0.6, strict=True)


def test_steepening_map_aligns_discontinuity():
    assert np.allclose(steepening_map(np.linspace(0, 1, 7), 0.5), np.linspace(0, 1, 7))
    assert np.allclose(steepening_map(np.array([0.0, 1.0]), 0.3), [0.0, 1.0])
    X = np.linspace(0.0, 1.0, 20001)
    for mu in np.linspace(0.2, 0.8, 20):
        assert np.isclose(steepening_map(0.5, mu), mu)
        f = steepening_gaussian(steepening_map(X, mu), mu)
        assert abs(X[np.argmax(f)] - 0.5) <= X[1] - X[0]
        assert np.isclose(f.max(), 0.2 / np.sqrt(mu))


def test_advection_data_examples():
    beta, tau, h, ubar, inflow = advec_react_data((0.0, 0.5, 80.0))
    assert np.allclose(beta, [1.0, 0.0])
    assert h(np.array([0.0, 0.0])) == 1.0
    assert np.allclose(ubar(np.array([[0.3, 0.0], [0.3, 1.0]])), 0.0)
    assert np.isclose(tau(np.array([0.0, 0.0])), 1.5)


def test_advection_inflow_faces_at_zero_angle():
    mesh = advec_mesh(3)
    law = AdvectionReaction()
    _, _, _, _, inflow = advec_react_data((0.0, 0.5, 80.0))
    normals = {0: [0.0, -1.0], 1: [1.0, 0.0], 2: [0.0, 1.0], 3: [-1.0, 0.0]}
    assert [s for s, n in normals.items() if inflow(np.array(n))] == [3]


def test_onepar_mapping():
    mesh = advec_mesh(6)
    assert np.allclose(onepar_mapping(mesh, 0.0).xhat, mesh.nodes.ravel())
    m = onepar_mapping(mesh, 0.3).nodes
    X = mesh.nodes
    end = np.flatnonzero(np.isclose(X[:, 0], 1.0) & np.isclose(X[:, 1], 0.5))[0]
    assert np.isclose(m[end, 1], 0.8)
    left = np.isclose(X[:, 0], 0.0)
    assert np.allclose(m[left], X[left])
    for c in np.linspace(-0.45, 0.45, 7):
        assert onepar_mapping(mesh, c).is_invertible()
    with pytest.raises(ValueError):
        onepar_mapping(mesh, 0.9)


def test_centroid_first_ordering():
    P = centroid_first(advec_slice(5))
    assert P[0, 0] == 0.0
    assert set(np.round(P[:, 0], 12)) == set(np.round(advec_slice(5)[:, 0], 12))


def test_nozzle_data_examples():
    A, dA, P = nozzle_data(1.2)
    assert np.isclose(A(0.0), 3.0) and np.isclose(A(10.0), 3.0)
    assert np.isclose(A(5.0), 1.2)
    assert np.isclose(dA(5.0), 0.0)
    assert np.isclose(P(np.array([3.0, 0.0, 7.5]), 0.0), 1.0)  # A(0) = 3


def test_nozzle_source_uses_area_slope():
    law = NozzleFlow()
    u = np.array([3.0, 0.0, 7.5]) * nozzle_area(2.0, 1.0) / 3.0
    S = np.asarray(law.source(u, np.array([2.0]), np.array([1.0])))
    A, dA, P = nozzle_data(1.0)
    assert np.allclose(S, [0.0, 1.0 * dA(2.0), 0.0])


def test_stagnation_pressure():
    exact1 = mpmath.mpf(1.2) ** 3.5
    assert abs(stagnation_pressure(1.0) - float(exact1)) < 1e-12
    assert abs(stagnation_pressure(3.0) - 12.0610) < 1e-4
    assert np.isclose(stagnation_pressure(2.0, P_inf=2.0), 2 * stagnation_pressure(2.0))
    with pytest.raises(ValueError):
        stagnation_pressure(0.9)


def test_shock_family_hinge():
    mesh = nozzle_mesh(20)
    fam = shock_family(mesh, 7.0)
    x = fam.nodes([1.0])
    assert x[0] == 0.0 and x[-1] == 10.0
    assert np.isclose(x[14], 8.0)
    assert np.all(np.diff(x) > 0)
    with pytest.raises(ValueError):
        shock_family(mesh, 10.0)


def test_nozzle_shock_tracking():
    disc = DGDiscretization(nozzle_mesh(50), NozzleFlow(av_scale=1.0), 1)
    Id = disc.mesh.nodes.ravel()

    def hdm(x, mu, U0):
        U0 = nozzle_initial_state(disc, mu) if U0 is None else U0
        return solve_hdm(disc, x, mu, U0, ptc_dt=0.1, max_iter=300).U

    U1 = hdm(Id, [0.5], None)
    xs1, Xs1 = nozzle_shock_position(disc, U1, Id, [0.5])
    assert 5.0 < xs1 < 10.0 and xs1 == Xs1
    assert abs(jump_locator(disc, U1).position - xs1) < 1.0
    fam = shock_family(disc.mesh, Xs1)
    U2, c = track_shock(disc, fam, Xs1, hdm, Id, [1.2], U1)
    xs2, Xs2 = nozzle_shock_position(disc, U2, fam.nodes(c), [1.2])
    assert xs2 > xs1 + 0.5
    assert abs(Xs2 - Xs1) < 1e-4
