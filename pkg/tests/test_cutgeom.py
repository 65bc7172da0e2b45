from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tracech import cutgeom as cg
from tracech import lattice as lat
from tracech.levelset import DiscreteLevelSet, MovingSphere, OscillatingEllipsoid, ScenarioField
from tracech.scenarios import BOX_SPHERE

from conftest import sphere_geometry


@dataclass
class Negated(ScenarioField):
    base: ScenarioField

    def phi(self, x, t):
        return -self.base.phi(x, t)

    def grad_phi(self, x, t):
        return -self.base.grad_phi(x, t)

    def dphi_dt(self, x, t):
        return -self.base.dphi_dt(x, t)

    def seeds(self, t):
        return self.base.seeds(t)


def _canonical(surface):
    # triangles as sorted vertex triples, sorted lexicographically
    tris = np.round(surface.triangles, 12)
    keys = [tuple(map(tuple, t[np.lexsort(t.T[::-1])])) for t in tris]
    return sorted(zip(keys, surface.parents.tolist()))


def test_march_tet_plane_section():
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 1, 1]], dtype=float)
    # x = 1/2 cuts a triangle with legs 1/2 and 1/2 from this tet
    tris = cg.march_tet(v, v[:, 0] - 0.5)
    assert tris.shape == (1, 3, 3)
    np.testing.assert_allclose(tris[0, :, 0], 0.5)
    area = 0.5 * np.linalg.norm(np.cross(tris[0, 1] - tris[0, 0], tris[0, 2] - tris[0, 0]))
    assert area == pytest.approx(0.125)
    # a quad cut is split into two triangles
    quad = cg.march_tet(v, np.array([-1.0, -1.0, 1.0, 1.0]))
    assert quad.shape == (2, 3, 3)
    assert len(cg.march_tet(v, np.ones(4))) == 0


def test_zero_vertex_values_are_shifted():
    v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 1, 1]], dtype=float)
    tris = cg.march_tet(v, np.array([0.0, 1.0, 1.0, 1.0]))
    assert len(tris) == 0
    tris = cg.march_tet(v, np.array([0.0, -1.0, 1.0, 1.0]))
    assert len(tris) == 1


def test_sign_flip_gives_same_surface():
    field = OscillatingEllipsoid(k=1)
    spec = lat.LatticeSpec.from_level(1, *BOX_SPHERE)
    a = cg.extract_surface(DiscreteLevelSet(field, spec, 0.1))
    b = cg.extract_surface(DiscreteLevelSet(Negated(field), spec, 0.1))
    assert len(a.triangles) == len(b.triangles)
    ka, kb = _canonical(a), _canonical(b)
    assert [k[1] for k in ka] == [k[1] for k in kb]
    np.testing.assert_allclose(np.array([k[0] for k in ka]), np.array([k[0] for k in kb]), atol=1e-12)
    # normals point towards increasing phi, so they flip with the sign
    for surf, sign in ((a, 1), (b, -1)):
        t = surf.triangles
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        assert np.all(sign * np.sum(n * field.grad_phi(t.mean(axis=1), 0.1), axis=-1) > 0)


def test_seed_hint_does_not_change_surface():
    field = MovingSphere((1.0, 0, 0))
    spec = lat.LatticeSpec.from_level(1, *BOX_SPHERE)
    prev = cg.extract_surface(DiscreteLevelSet(field, spec, 0.0))
    a = cg.extract_surface(DiscreteLevelSet(field, spec, 0.05))
    b = cg.extract_surface(DiscreteLevelSet(field, spec, 0.05), prev.fine_cubes)
    np.testing.assert_array_equal(a.triangles, b.triangles)
    np.testing.assert_array_equal(a.parents, b.parents)


def test_triangles_lie_in_parent_cells():
    _, spec, surf, _ = sphere_geometry(2)
    lam = lat.barycentric(spec, surf.parents, surf.triangles)
    assert lam.min() > -1e-10
    assert np.all(surf.areas > cg.SLIVER_AREA)


@pytest.mark.parametrize("level", [1, 2, 3])
def test_area_and_moments(level):
    _, _, surf, _ = sphere_geometry(level)
    h = lat.mesh_size(level)
    x = surf.qpoints
    tol = 1.5 * h**2
    assert surf.area == pytest.approx(4 * np.pi, abs=4 * np.pi * tol)
    assert surf.integrate(np.ones(x.shape[:2])) == pytest.approx(surf.area, rel=1e-12)
    for i in range(3):
        assert abs(surf.integrate(x[..., i])) < tol
        assert surf.integrate(x[..., i] ** 2) == pytest.approx(4 * np.pi / 3, abs=4 * tol)


def test_quadrature_degree_exactness():
    # degree-4 rule integrates a quadratic on a flat triangle exactly
    tri = np.array([[[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]]])
    surf = cg.surface_quadrature(cg.CutSurface(tri, np.zeros(1, int), 0.0, np.empty(0, int)), 4)
    x, y = surf.qpoints[..., 0], surf.qpoints[..., 1]
    assert surf.integrate(x * y) == pytest.approx(1 / 24, rel=1e-12)
    assert surf.integrate(x**2) == pytest.approx(1 / 12, rel=1e-12)
    with pytest.raises(ValueError):
        cg.surface_quadrature(surf, 3)


@given(st.floats(0.0, 0.3))
def test_band_contains_cells_near_surface(delta):
    field, spec, surf, band = sphere_geometry(1, delta=delta)
    assert np.all(band.has_cells(surf.parents))
    v = lat.cell_vertices(spec, np.arange(spec.n_cells))
    d = np.abs(np.linalg.norm(v, axis=-1) - 1.0)
    # any cell with a vertex within delta of the sphere (minus geometric slack) is active
    near = np.flatnonzero(d.min(axis=1) < delta - 0.05 * spec.h)
    assert np.all(band.has_cells(near))
    assert np.array_equal(band.cells, np.unique(band.cells))
    assert np.array_equal(lat.cell_nodes(spec, band.cells), band.nodes[band.cell_dofs])


def test_band_width_rules():
    assert cg.band_width(0.01, 10.0) == pytest.approx(0.1)
    assert cg.band_width(0.01, 10.0, 2.0) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        cg.band_width(0.01, 1.0, 0.5)


def test_inclusion_holds_for_small_step_and_fails_for_large():
    field = MovingSphere((1.0, 0, 0))
    spec = lat.LatticeSpec.from_level(2, *BOX_SPHERE)
    dls = DiscreteLevelSet(field, spec, 0.0)
    surf = cg.extract_surface(dls)
    dt = 0.01
    band = cg.select_band(dls, surf, cg.band_width(dt, cg.velocity_bound(field, surf, dt)))
    nxt = cg.extract_surface(DiscreteLevelSet(field, spec, dt))
    ok, _, margin = cg.check_inclusion(band, nxt)
    assert ok and margin > 0
    far = cg.extract_surface(DiscreteLevelSet(field, spec, 0.4))
    ok, worst, margin = cg.check_inclusion(band, far)
    assert not ok and margin == -1.0
    assert worst.shape == (3,)


def test_velocity_bound_of_translating_sphere():
    field = MovingSphere((2.0, 0, 0))
    _, _, surf, _ = sphere_geometry(2, field)
    b = cg.velocity_bound(field, surf, 0.01)
    assert 2.0 * 1.1 * 0.98 < b <= 2.0 * 1.1


def test_empty_surface_raises():
    field = MovingSphere(center0=(0.0, 0.0, 0.0), radius=5.0)
    spec = lat.LatticeSpec.from_level(0, *BOX_SPHERE)
    with pytest.raises(cg.EmptyBandError):
        cg.extract_surface(DiscreteLevelSet(field, spec, 0.0))


@pytest.mark.parametrize("level", [2, 3])
def test_zero_width_band_is_the_cut_cells(level):
    field, spec, surf, band = sphere_geometry(level)
    v = lat.cell_vertices(spec, band.cells)
    nodes = np.concatenate([v, 0.5 * (v[:, cg._EDGES[:, 0]] + v[:, cg._EDGES[:, 1]])], axis=1)
    phi = field.phi(nodes, 0.0)
    assert np.all((phi.min(axis=1) < 0) & (phi.max(axis=1) > 0))
    cut = np.isin(band.cells, surf.parents)
    vphi = phi[:, :4]
    assert np.all(cut | ((vphi.min(axis=1) < 0) & (vphi.max(axis=1) > 0)))


def test_wide_band_takes_every_cell():
    spec = lat.LatticeSpec.from_level(0, *BOX_SPHERE)
    _, _, _, band = sphere_geometry(0, delta=2 * float(np.linalg.norm(spec.extents)))
    assert np.array_equal(band.cells, np.arange(spec.n_cells))


def test_band_size_scales_like_area_over_h_squared():
    h, n = [], []
    for level in (2, 3, 4):
        _, spec, _, band = sphere_geometry(level)
        h.append(spec.h)
        n.append(len(band.cells))
    slope = np.polyfit(np.log(h), np.log(n), 1)[0]
    assert -2.3 <= slope <= -1.7
