from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from tracech import cutgeom as cg
from tracech import lattice as lat
from tracech.assembly import (ModelParams, assemble, cell_matrices, evaluate_prev, mobility,
                              normal_stabilization, p1_shape, potential, tangential_gradient)
from tracech.cutgeom import InclusionError, NarrowBand
from tracech.levelset import ScenarioField
from tracech.scenarios import BOX_SPHERE

from conftest import sphere_geometry

SPEC = lat.LatticeSpec.from_level(1, *BOX_SPHERE)


@dataclass
class Plane(ScenarioField):
    n: np.ndarray
    x0: np.ndarray

    def phi(self, x, t):
        return (np.asarray(x) - self.x0) @ self.n

    def grad_phi(self, x, t):
        return np.broadcast_to(self.n, np.shape(x)).copy()

    def dphi_dt(self, x, t):
        return np.zeros(np.shape(x)[:-1])

    def seeds(self, t):
        return self.x0[None]


def _one_cell(cell):
    nodes = lat.cell_nodes(SPEC, np.array([cell]))
    uniq, inv = np.unique(nodes, return_inverse=True)
    return NarrowBand(SPEC, np.array([cell]), uniq, inv.reshape(1, 4), 0.0, 0.0)


def _symbolic_forms(tri, verts, n, u, c_coef, params, rho_c, rho_mu):
    """Exact integrals over one flat triangle with c_prev = c0 + b.x (sympy, rational in s, t)."""
    s, t = sp.symbols("s t")
    P = [sp.Matrix(p.tolist()) for p in tri]
    x = P[0] + s * (P[1] - P[0]) + t * (P[2] - P[0])
    jac = 2 * 0.5 * np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
    lam_vals, grads = p1_shape(verts, verts.mean(axis=0))
    T = np.linalg.inv((verts[1:] - verts[0]).T)
    lam = [None] * 4
    lam_rest = [sum(T[i, k] * (x[k] - verts[0][k]) for k in range(3)) for i in range(3)]
    lam[0] = 1 - sum(lam_rest)
    lam[1:] = lam_rest
    c0, b = c_coef
    c = c0 + sum(b[k] * x[k] for k in range(3))
    f1 = sp.Rational(1, 2) * c * (1 - c) * (1 - 2 * c)
    M = params.sigma * c * (1 - c)

    def integ(expr):
        return float(sp.integrate(sp.integrate(sp.expand(expr), (t, 0, 1 - s)), (s, 0, 1)) * jac)

    P_t = np.eye(3) - np.outer(n, n)
    gt = grads @ P_t
    A = np.zeros((2, 2, 4, 4))
    F = np.zeros((2, 4))
    dt, eps, beta, rho = params.dt, params.epsilon, params.beta_s, params.rho
    intM = integ(M)
    for i in range(4):
        F[0, i] = integ(rho * lam[i] * c / dt)
        F[1, i] = integ(lam[i] * (f1 / eps - beta * c))
        for j in range(4):
            mass = integ(lam[i] * lam[j])
            dot = float(gt[i] @ gt[j])
            A[0, 0, i, j] = rho * mass / dt + rho * float(u @ grads[j]) * integ(lam[i])
            A[0, 1, i, j] = intM * dot
            A[1, 0, i, j] = -beta * mass - eps * jac * 0.5 * dot
            A[1, 1, i, j] = mass
    vol = SPEC.h**3 / 6
    dn = grads @ n
    S = vol * np.outer(dn, dn)
    A[0, 1] += rho_mu * S
    A[1, 0] -= rho_c * S
    return A, F


def test_single_element_matches_symbolic_oracle():
    cell = lat.cell_id(SPEC, np.array([3, 4, 2]), 4)
    verts = lat.cell_vertices(SPEC, np.array([cell]))[0]
    # a triangle strictly inside the tet
    W = np.array([[0.6, 0.2, 0.1, 0.1], [0.1, 0.5, 0.3, 0.1], [0.15, 0.15, 0.2, 0.5]])
    tri = W @ verts
    n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
    n /= np.linalg.norm(n)
    field = Plane(n, tri[0])
    surf = cg.surface_quadrature(cg.CutSurface(tri[None], np.array([cell]), 0.0, np.empty(0, int)), 4, field)
    band = _one_cell(cell)
    params = ModelParams(epsilon=0.1, dt=0.01, sigma=2.0)
    u = np.array([0.3, -1.2, 0.7])
    c0, b = 0.4, np.array([0.1, -0.05, 0.2])
    c_prev = c0 + surf.qpoints @ b
    local, loads = cell_matrices(band, surf, params, field, u, c_prev)
    rho_c, rho_mu = params.stabilization(SPEC.h)
    A, F = _symbolic_forms(tri, verts, n, u, (c0, b), params, rho_c, rho_mu)
    # local dofs follow the cell's vertex order; band.cell_dofs maps them to sorted nodes
    np.testing.assert_allclose(local[0], A, rtol=0, atol=1e-12 * np.abs(A).max())
    np.testing.assert_allclose(loads[0], F, rtol=0, atol=1e-12 * np.abs(F).max())


def _dense_oracle(band, surf, params, field, u, c_prev):
    """Brute-force global assembly with generic P1 shape functions."""
    N = band.n_nodes
    A = np.zeros((2 * N, 2 * N))
    b = np.zeros(2 * N)
    rho_c, rho_mu = params.stabilization(band.lattice.h)
    pos = np.searchsorted(band.cells, surf.parents)
    verts = lat.cell_vertices(band.lattice, band.cells)
    _, d1, _ = potential(c_prev)
    M = mobility(c_prev, params.sigma)
    for m in range(len(surf.parents)):
        dofs = band.cell_dofs[pos[m]]
        lam, G = p1_shape(np.broadcast_to(verts[pos[m]], (surf.qpoints.shape[1], 4, 3)), surf.qpoints[m])
        for q in range(lam.shape[0]):
            w, nq = surf.qweights[m, q], surf.qnormals[m, q]
            gt = tangential_gradient(G[q], nq)
            li = lam[q]
            mass = w * np.outer(li, li)
            stiff = w * gt @ gt.T
            conv = w * np.outer(li, G[q] @ u[m, q])
            ix = np.ix_(dofs, dofs)
            A[ix] += params.rho * (mass / params.dt + conv)
            A[np.ix_(dofs, N + dofs)] += M[m, q] * stiff
            A[np.ix_(N + dofs, dofs)] += -params.beta_s * mass - params.epsilon * stiff
            A[np.ix_(N + dofs, N + dofs)] += mass
            b[dofs] += w * params.rho * c_prev[m, q] / params.dt * li
            b[N + dofs] += w * (d1[m, q] / params.epsilon - params.beta_s * c_prev[m, q]) * li
    S = normal_stabilization(band, field, surf.t)
    for k, dofs in enumerate(band.cell_dofs):
        A[np.ix_(dofs, N + dofs)] += rho_mu * S[k]
        A[np.ix_(N + dofs, dofs)] -= rho_c * S[k]
    return A, b


def test_global_assembly_matches_dense_oracle():
    field, spec, surf, band = sphere_geometry(0, delta=0.2)
    rng = np.random.default_rng(3)
    u = rng.normal(size=surf.qpoints.shape)
    c_prev = rng.uniform(0.05, 0.95, size=surf.qweights.shape)
    params = ModelParams(epsilon=0.1, dt=0.01)
    sys = assemble(band, surf, params, field, u, c_prev)
    A, b = _dense_oracle(band, surf, params, field, u, c_prev)
    np.testing.assert_allclose(sys.matrix.to_dense(), A, rtol=0, atol=1e-12 * np.abs(A).max())
    np.testing.assert_allclose(sys.rhs, b, rtol=0, atol=1e-12 * np.abs(b).max())


def test_mass_row_sums(sphere_l1):
    field, spec, surf, band = sphere_l1
    params = ModelParams(epsilon=0.1, dt=0.01, sigma=0.0, beta_s=0.0, rho_c=0.0, rho_mu=0.0)
    c_prev = np.full(surf.qweights.shape, 0.3)
    sys = assemble(band, surf, params, field, np.zeros(surf.qpoints.shape), c_prev)
    N = band.n_nodes
    ones = np.concatenate([np.ones(N), np.zeros(N)])
    assert sys.matrix.matvec(ones)[:N].sum() == pytest.approx(surf.area / params.dt, rel=1e-12)


def test_constant_half_gives_zero_mu_rhs(sphere_l1):
    field, spec, surf, band = sphere_l1
    params = ModelParams(epsilon=0.1, dt=0.01, beta_s=0.0)
    sys = assemble(band, surf, params, field, np.zeros(surf.qpoints.shape), np.full(surf.qweights.shape, 0.5))
    assert np.abs(sys.rhs[band.n_nodes:]).max() < 1e-15


def test_stabilization_annihilates_constants(sphere_l1):
    field, _, surf, band = sphere_l1
    S = normal_stabilization(band, field, 0.0)
    assert np.abs(S.sum(axis=2)).max() < 1e-14
    assert np.all(np.linalg.eigvalsh(S) > -1e-14)


def test_non_finite_input_is_reported(sphere_l1):
    field, _, surf, band = sphere_l1
    c_prev = np.full(surf.qweights.shape, 0.5)
    c_prev[3, 1] = np.nan
    with pytest.raises(FloatingPointError, match="cell"):
        assemble(band, surf, ModelParams(0.1, 0.01), field, np.zeros(surf.qpoints.shape), c_prev)


def test_evaluate_prev_reproduces_linears(sphere_l1, rng):
    field, spec, surf, band = sphere_l1
    a, g = 0.3, np.array([1.0, -2.0, 0.5])
    vals = a + band.node_positions() @ g
    v, grad = evaluate_prev(vals, band, surf.qpoints, surf.parents)
    np.testing.assert_allclose(v, a + surf.qpoints @ g, atol=1e-12)
    np.testing.assert_allclose(grad, np.broadcast_to(g, grad.shape), atol=1e-12)
    # nodal values exactly at nodes
    k = rng.integers(len(band.cells), size=20)
    x = lat.cell_vertices(spec, band.cells[k])[:, 2]
    v, _ = evaluate_prev(vals, band, x, band.cells[k])
    np.testing.assert_array_equal(v, vals[band.cell_dofs[k, 2]])


def test_evaluate_prev_continuous_across_faces(sphere_l1, rng):
    field, spec, surf, band = sphere_l1
    vals = rng.normal(size=band.n_nodes)
    nb = lat.face_neighbors(spec, band.cells)
    hits = 0
    for c, row in zip(band.cells, nb):
        for v, other in enumerate(row):
            if other < 0 or not band.has_cells([other])[0]:
                continue
            face = np.delete(lat.cell_vertices(spec, c), v, axis=0)
            x = rng.dirichlet(np.ones(3)) @ face
            a, _ = evaluate_prev(vals, band, x[None], np.array([c]))
            b, _ = evaluate_prev(vals, band, x[None], np.array([other]))
            assert a[0] == pytest.approx(b[0], abs=1e-12)
            hits += 1
        if hits > 200:
            break
    assert hits > 50


def test_evaluate_prev_outside_band_raises(sphere_l1):
    field, spec, surf, band = sphere_l1
    with pytest.raises(InclusionError):
        evaluate_prev(np.zeros(band.n_nodes), band, np.zeros((1, 3)))


def test_potential_values_and_fd():
    f0, d1, d2 = potential(0.5)
    assert (f0, d1, d2) == (pytest.approx(0.015625), 0.0, pytest.approx(-0.25))
    c = np.linspace(-0.5, 1.5, 100)
    h = 1e-6
    fd1 = (potential(c + h)[0] - potential(c - h)[0]) / (2 * h)
    fd2 = (potential(c + h)[1] - potential(c - h)[1]) / (2 * h)
    np.testing.assert_allclose(potential(c)[1], fd1, atol=1e-8)
    np.testing.assert_allclose(potential(c)[2], fd2, atol=1e-8)
    assert np.all(potential(c)[2] >= -0.25 - 1e-15)


def test_mobility_clamps():
    assert mobility(0.5) == pytest.approx(0.25)
    assert mobility(-0.1) == 0.0
    assert mobility(1.3) == 0.0
    assert mobility(0.5, 16.0) == pytest.approx(4.0)


unit = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 1e-3)


@given(st.tuples(*[st.floats(-1e3, 1e3)] * 3), unit)
def test_tangential_projection(g, n):
    g, n = np.array(g), np.array(n) / np.linalg.norm(n)
    p = tangential_gradient(g, n)
    assert abs(p @ n) <= 1e-12 * max(1.0, np.linalg.norm(g))
    np.testing.assert_allclose(tangential_gradient(p, n), p, atol=1e-12 * max(1.0, np.linalg.norm(g)))


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(epsilon=0.0, dt=0.1)
    with pytest.raises(ValueError):
        ModelParams(epsilon=0.1, dt=-1.0)
    assert ModelParams(epsilon=0.1, dt=0.1).beta_s == pytest.approx(10.0)
