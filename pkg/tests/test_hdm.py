import jax.numpy as jnp
import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from romift.fe import build_structured_mesh
from romift.hdm import (ConservationLaw, DGDiscretization, HdmSolveError, MappingError,
                        block_triangular_solve, solve_hdm, transform_flux_source)
from romift.problems import (AdvectionReaction, NozzleFlow, advec_mesh, nozzle_initial_state,
                             nozzle_mesh, onepar_mapping)


class ConstantAdvection(ConservationLaw):
    """u_t + a . grad u = 0 with a constant ghost state on every boundary."""

    m, dim = 1, 2

    def __init__(self, a=(1.0, 0.3), ghost=2.0):
        self.a, self.ghost = jnp.asarray(a), ghost

    def flux(self, u, x, mu):
        return u[:, None] * self.a[None, :]

    def numerical_flux(self, ul, ur, n, x, mu):
        an = jnp.dot(self.a, n)
        return jnp.where(an > 0, ul, ur) * an

    def boundary_state(self, u, x, n, surface, mu):
        return jnp.array([self.ghost])


def _warp(mesh, amp=0.05):
    X = mesh.nodes
    x = X.copy()
    x[:, 0] += amp * np.sin(np.pi * X[:, 0]) * np.sin(np.pi * X[:, 1])
    x[:, 1] += amp * np.sin(2 * np.pi * X[:, 0]) * X[:, 1] * (1 - X[:, 1])
    return x.ravel()


def test_transform_flux_source_identity_and_singular():
    law = AdvectionReaction()
    mu = [0.1, 0.5, 80.0]
    x = np.array([0.3, 0.4])
    F, S = transform_flux_source([1.5], np.eye(2), 1.0, mu, law, x)
    assert np.allclose(F, 1.5 * np.array([[np.cos(0.1), np.sin(0.1)]]))
    G = np.array([[2.0, 0.0], [0.0, 0.5]])
    F2, S2 = transform_flux_source([1.5], G, 1.0, mu, law, x)
    assert np.allclose(F2, F @ np.linalg.inv(G).T)
    assert np.allclose(S2, S)
    with pytest.raises(MappingError):
        transform_flux_source([1.0], np.zeros((2, 2)), 0.0, mu, law, x)


@pytest.mark.parametrize("degree", [0, 1, 3])
def test_free_stream_preserved_on_warped_mesh(degree):
    mesh = build_structured_mesh([0.0, 0.0], [1.0, 1.0], 4)
    disc = DGDiscretization(mesh, ConstantAdvection(), degree)
    U = np.full(disc.N, 2.0)
    R = disc.residual(U, _warp(mesh), [])
    assert np.abs(R).max() < 1e-13


def test_mapped_residual_equals_physical_mesh_residual(rng):
    """Residual on the reference mesh with an affine-per-element mapping equals
    the residual assembled directly on the mapped mesh."""
    mesh = advec_mesh(3)
    law = AdvectionReaction()
    disc = DGDiscretization(mesh, law, 2)
    xhat = _warp(mesh, 0.04)
    phys = build_structured_mesh([0.0, 0.0], [1.0, 1.0], 3)
    phys.nodes[:] = xhat.reshape(-1, 2)
    disc_p = DGDiscretization(phys, law, 2)
    U = rng.standard_normal(disc.N)
    mu = [0.2, 0.4, 70.0]
    assert np.allclose(disc.residual(U, xhat, mu), disc_p.residual(U, phys.nodes.ravel(), mu),
                       atol=1e-12)


def test_residual_rejects_inverted_mapping(advec_small):
    x = advec_small.mesh.nodes.copy()
    x[:, 0] = 1.0 - x[:, 0]
    with pytest.raises(MappingError):
        advec_small.residual(np.zeros(advec_small.N), x.ravel(), [0.0, 0.5, 80.0])


def test_jacobian_products_match_sparse_jacobians(advec_small, rng):
    d = advec_small
    x = onepar_mapping(d.mesh, 0.1).xhat
    U = rng.standard_normal(d.N)
    mu = [0.2, 0.5, 90.0]
    Ju, Jx = d.jacobians(U, x, mu)
    V = rng.standard_normal((d.N, 3))
    D = rng.standard_normal((d.n_mapping, 2))
    assert np.allclose(d.state_jvp(U, x, mu, V), Ju @ V, atol=1e-10)
    assert np.allclose(d.mapping_jvp(U, x, mu, D), Jx @ D, atol=1e-10)


def test_mass_matrix_integrates_constants(advec_small):
    x = _warp(advec_small.mesh)
    M = advec_small.mass_matrix(x)
    one = np.ones(advec_small.N)
    assert np.isclose(one @ M @ one, 1.0)  # the warp preserves the unit square


def test_block_triangular_solve(advec_small, rng):
    d = advec_small
    x = d.mesh.nodes.ravel()
    mu = [0.25, 0.5, 80.0]
    J, _ = d.jacobians(np.zeros(d.N), x, mu)
    r = rng.standard_normal(d.N)
    order = d.law.element_order(x.reshape(-1, 2)[d.mesh.elements].mean(axis=1), mu)
    y = block_triangular_solve(J, d.layout.nbasis, order, r)
    assert np.allclose(y, spla.spsolve(J.tocsc(), r), atol=1e-10)
    with pytest.raises(ValueError):
        block_triangular_solve(J, d.layout.nbasis, order[::-1], r)


def test_advection_hdm_linear_one_step(advec_small):
    d = advec_small
    res = solve_hdm(d, onepar_mapping(d.mesh, 0.1), [0.3, 0.4, 70.0])
    assert res.iterations == 1
    assert np.linalg.norm(d.residual(res.U, onepar_mapping(d.mesh, 0.1).xhat,
                                     [0.3, 0.4, 70.0])) < 1e-10


def test_nozzle_hdm_converges_small():
    d = DGDiscretization(nozzle_mesh(40), NozzleFlow(av_scale=1.0), 1)
    x = d.mesh.nodes.ravel()
    res = solve_hdm(d, x, [1.0], nozzle_initial_state(d, 1.0), ptc_dt=0.1, max_iter=300)
    assert res.residual_norm < 1e-8
    assert d.law.admissible(res.U.reshape(d.layout.n_elements, d.layout.nbasis, 3))


def test_hdm_failure_raises(advec_small):
    with pytest.raises(HdmSolveError):
        d = DGDiscretization(nozzle_mesh(10), NozzleFlow(), 1)
        solve_hdm(d, d.mesh.nodes.ravel(), [1.0], nozzle_initial_state(d, 1.0), max_iter=1)
