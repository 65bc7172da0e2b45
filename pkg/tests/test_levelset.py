from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tracech.levelset import (CollidingSpheres, FrozenField, MovingSphere, OscillatingEllipsoid,
                              SplittingSpheres)

FIELDS = {
    "sphere": (MovingSphere((1.0, 0.5, 0), (0, 0, 2.0)), 0.3),
    "ellipsoid": (OscillatingEllipsoid(k=1), 0.2),
    "ellipsoid_fast": (OscillatingEllipsoid(k=5), 0.03),
    "collide": (CollidingSpheres(w=1.0), 0.1),
    "split": (SplittingSpheres(w=-1.0), 0.5),
}


def _near_surface(field, t, rng, n=200):
    seeds = field.seeds(t)
    base = seeds[rng.integers(len(seeds), size=n)]
    return base + rng.uniform(-0.3, 0.3, size=(n, 3))


def _fd_grad(f, x, h=1e-6):
    g = np.empty(x.shape)
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        g[..., i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.mark.parametrize("name", FIELDS)
def test_derivatives_match_finite_differences(name, rng):
    field, t = FIELDS[name]
    x = _near_surface(field, t, rng)
    g = field.grad_phi(x, t)
    fd = _fd_grad(lambda y: field.phi(y, t), x)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6 * np.abs(g).max())
    dt = 1e-6
    fdt = (field.phi(x, t + dt) - field.phi(x, t - dt)) / (2 * dt)
    np.testing.assert_allclose(field.dphi_dt(x, t), fdt, rtol=1e-5, atol=1e-6)


@pytest.mark.parametrize("name", FIELDS)
def test_seeds_on_surface(name):
    field, t = FIELDS[name]
    assert np.all(np.abs(field.phi(field.seeds(t), t)) < 1e-10)


@pytest.mark.parametrize("name", FIELDS)
def test_surface_moves_with_normal_speed(name, rng):
    # phi(x + dt w n, t + dt) = O(dt^2) for x on the surface
    field, t = FIELDS[name]
    x = field.seeds(t)
    un, wn = field.normal_speeds(x, t)
    n = field.normal(x, t)
    dt = 1e-6
    y = x + dt * wn[:, None] * n
    assert np.all(np.abs(field.phi(y, t + dt)) < 1e-9)
    np.testing.assert_allclose(np.sum(field.normal_velocity(x, t) * n, axis=-1), wn, atol=1e-12)


@given(st.floats(0.0, 1.0), st.floats(-1.0, 1.0))
def test_rigid_material_velocity_matches_normal_speed(t, s):
    field = MovingSphere((10.0, 0, 0), (10.0, 0, 0))
    d = np.array([s, np.sqrt(1 - s * s), 0.0])
    x = field.center(t) + d
    un, wn = field.normal_speeds(x[None], t)
    assert un[0] == pytest.approx(wn[0], abs=1e-10)
    assert wn[0] == pytest.approx(10.0 * s, abs=1e-10)


def test_rotation_is_orthogonal():
    R = MovingSphere(omega=(1.0, 2.0, 3.0)).rotation(0.7)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-14)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_collision_changes_topology():
    f = CollidingSpheres(w=1.0)
    # the midpoint between the centres turns from outside to inside
    origin = np.zeros((1, 3))
    assert f.phi(origin, 0.2)[0] > 0
    assert f.phi(origin, 0.3)[0] < 0
    with pytest.raises(ValueError, match="singular"):
        f.grad_phi(np.array([[1.5, 0, 0]]), 0.0)
    assert f.phi(np.array([[1.5, 0, 0]]), 0.0)[0] == -np.inf


def test_collision_material_velocity_far_from_neck():
    f = CollidingSpheres(w=1.0)
    x = np.array([[2.5, 0.0, 0.0], [-2.5, 0.0, 0.0]])
    u = f.material_velocity(x, 0.0)
    np.testing.assert_allclose(u[:, 0], [-1.0, 1.0], atol=1e-6)
    un, _ = f.normal_speeds(x, 0.0)
    np.testing.assert_allclose(un, np.sum(u * f.normal(x, 0.0), axis=-1), atol=1e-12)


def test_splitting_mirrors_collision():
    s = SplittingSpheres(w=-1.0)
    np.testing.assert_allclose(s.seeds(0.0)[0, 0], CollidingSpheres(w=1.0).seeds(1.5)[0, 0])
    with pytest.raises(ValueError):
        SplittingSpheres(w=1.0)


def test_frozen_field_is_still(rng):
    f = FrozenField(CollidingSpheres(w=1.0), 0.25)
    x = _near_surface(f, 0.0, rng)
    assert np.all(f.dphi_dt(x, 3.0) == 0)
    assert np.all(f.material_velocity(x, 3.0) == 0)
    assert f.normal_speed_bound(x, 0.0, 1.0) == 0.0
    np.testing.assert_array_equal(f.phi(x, 9.0), CollidingSpheres(w=1.0).phi(x, 0.25))


def test_normal_speed_bound_dominates_samples(rng):
    field = OscillatingEllipsoid(k=1)
    x = _near_surface(field, 0.0, rng)
    bound = field.normal_speed_bound(x, 0.0, 0.01)
    for t in np.linspace(0, 0.01, 7):
        un, wn = field.normal_speeds(x, t)
        assert np.abs(wn).max() <= bound * 1.01
    assert field.normal_speed_bound(np.empty((0, 3)), 0.0, 1.0) == 0.0
