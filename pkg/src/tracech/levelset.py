"""Analytic evolving surfaces: level sets, their derivatives and velocity fields.

All functions take points as arrays of shape (..., 3) and a scalar time.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.optimize import brentq
from scipy.spatial.transform import Rotation

from .lattice import LatticeSpec, node_position

GRAD_TOL = 1e-12


def _as_points(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


class ScenarioField:
    """Base class for an analytic level set phi(x, t) with material velocity u(x, t)."""

    density = 1.0

    def phi(self, x, t: float) -> np.ndarray:
        raise NotImplementedError

    def grad_phi(self, x, t: float) -> np.ndarray:
        raise NotImplementedError

    def dphi_dt(self, x, t: float) -> np.ndarray:
        raise NotImplementedError

    def material_velocity(self, x, t: float) -> np.ndarray:
        return self.normal_velocity(x, t)

    def seeds(self, t: float) -> np.ndarray:
        """Points on Gamma(t), at least one per connected component."""
        raise NotImplementedError

    def rho(self, x) -> np.ndarray:
        return np.full(np.shape(x)[:-1], self.density)

    def _grad_checked(self, x, t):
        g = self.grad_phi(x, t)
        norm = np.linalg.norm(g, axis=-1)
        if np.any(norm <= GRAD_TOL):
            raise ValueError("level set gradient vanishes; normal undefined")
        return g, norm

    def normal(self, x, t: float) -> np.ndarray:
        g, norm = self._grad_checked(x, t)
        return g / norm[..., None]

    def normal_velocity(self, x, t: float) -> np.ndarray:
        g, norm = self._grad_checked(x, t)
        return -(self.dphi_dt(x, t) / norm**2)[..., None] * g

    def normal_speeds(self, x, t: float):
        """Signed u.n and w.n at ``x`` (w the normal velocity of the level set)."""
        g, norm = self._grad_checked(x, t)
        n = g / norm[..., None]
        wn = -self.dphi_dt(x, t) / norm
        return self._material_normal_speed(x, t, n, wn), wn

    def _material_normal_speed(self, x, t, n, wn):
        return np.sum(self.material_velocity(x, t) * n, axis=-1)

    def normal_speed_bound(self, x, t0: float, t1: float) -> float:
        """max |u.n| and |w.n| sampled at ``x`` over [t0, t1]."""
        best = 0.0
        if np.size(x) == 0:
            return best
        for t in (t0, 0.5 * (t0 + t1), t1):
            un, wn = self.normal_speeds(x, t)
            best = max(best, float(np.abs(un).max()), float(np.abs(wn).max()))
        return best


@dataclass
class MovingSphere(ScenarioField):
    """Sphere of given radius translating with ``velocity`` and spinning with ``omega``."""

    velocity: tuple = (0.0, 0.0, 0.0)
    omega: tuple = (0.0, 0.0, 0.0)
    center0: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0

    def center(self, t: float) -> np.ndarray:
        return np.asarray(self.center0, float) + t * np.asarray(self.velocity, float)

    def rotation(self, t: float) -> np.ndarray:
        return Rotation.from_rotvec(t * np.asarray(self.omega, float)).as_matrix()

    def _rel(self, x, t):
        d = _as_points(x) - self.center(t)
        r = np.linalg.norm(d, axis=-1)
        if np.any(r == 0):
            raise ValueError("sphere level set is singular at the centre")
        return d, r

    def phi(self, x, t):
        return np.linalg.norm(_as_points(x) - self.center(t), axis=-1) - self.radius

    def grad_phi(self, x, t):
        d, r = self._rel(x, t)
        return d / r[..., None]

    def dphi_dt(self, x, t):
        d, r = self._rel(x, t)
        return -(d @ np.asarray(self.velocity, float)) / r

    def material_velocity(self, x, t):
        d = _as_points(x) - self.center(t)
        return np.asarray(self.velocity, float) + np.cross(np.asarray(self.omega, float), d)

    def body_coordinates(self, x, t) -> np.ndarray:
        """Closest point on the sphere, pulled back to the reference unit sphere."""
        d, r = self._rel(x, t)
        return (d / r[..., None]) @ self.rotation(t)

    def seeds(self, t):
        c = self.center(t)
        return np.array([c + [self.radius, 0, 0], c - [self.radius, 0, 0]])


@dataclass
class OscillatingEllipsoid(ScenarioField):
    """Ellipsoid with semi-axis a(t) = 1 + amplitude*sin(2 pi k t) along x1."""

    k: float = 1.0
    amplitude: float = 0.2

    def a(self, t):
        return 1.0 + self.amplitude * np.sin(2 * np.pi * self.k * t)

    def da(self, t):
        return 2 * np.pi * self.k * self.amplitude * np.cos(2 * np.pi * self.k * t)

    def phi(self, x, t):
        x = _as_points(x)
        return (x[..., 0] / self.a(t)) ** 2 + x[..., 1] ** 2 + x[..., 2] ** 2 - 1.0

    def grad_phi(self, x, t):
        x = _as_points(x)
        g = 2.0 * x
        g[..., 0] /= self.a(t) ** 2
        return g

    def dphi_dt(self, x, t):
        x = _as_points(x)
        return -2.0 * x[..., 0] ** 2 * self.da(t) / self.a(t) ** 3

    def seeds(self, t):
        a = self.a(t)
        return np.array([[a, 0, 0], [-a, 0, 0]])


@numba.njit(cache=True)
def _collide_kernel(x, a, w, need_grad):
    """phi, grad phi, dphi/dt for centres +-(a, 0, 0) moving with -+w along x1."""
    P = x.shape[0]
    phi = np.empty(P)
    grad = np.zeros((P, 3))
    dphi = np.zeros(P)
    singular = False
    for p in range(P):
        x0, x1, x2 = x[p, 0], x[p, 1], x[p, 2]
        r2p = (x0 - a) ** 2 + x1 * x1 + x2 * x2
        r2m = (x0 + a) ** 2 + x1 * x1 + x2 * x2
        if r2p == 0.0 or r2m == 0.0:
            phi[p] = -np.inf
            singular = True
            continue
        ip3 = r2p ** -1.5
        im3 = r2m ** -1.5
        phi[p] = 1.0 - ip3 - im3
        if need_grad:
            ip5 = ip3 / r2p
            im5 = im3 / r2m
            grad[p, 0] = 3.0 * ((x0 - a) * ip5 + (x0 + a) * im5)
            grad[p, 1] = 3.0 * x1 * (ip5 + im5)
            grad[p, 2] = 3.0 * x2 * (ip5 + im5)
            # d/dt c+ = (-w, 0, 0), d/dt c- = (w, 0, 0)
            dphi[p] = 3.0 * w * ((x0 - a) * ip5 - (x0 + a) * im5)
    return phi, grad, dphi, singular


@dataclass
class CollidingSpheres(ScenarioField):
    """phi = 1 - |x - c+|^-3 - |x - c-|^-3 with centres c(t) = +-(3/2 - w t, 0, 0)."""

    w: float = 1.0
    blend_width: float = 0.1

    def centers(self, t):
        a = 1.5 - self.w * t
        return np.array([a, 0.0, 0.0]), np.array([-a, 0.0, 0.0])

    def _eval(self, x, t, need_grad=True):
        x = _as_points(x)
        a = 1.5 - self.w * t
        phi, grad, dphi, singular = _collide_kernel(np.ascontiguousarray(x.reshape(-1, 3)), a, self.w,
                                                    need_grad)
        if need_grad and singular:
            raise ValueError("colliding-spheres level set is singular at a centre")
        lead = x.shape[:-1]
        return phi.reshape(lead), grad.reshape(lead + (3,)), dphi.reshape(lead)

    def phi(self, x, t):
        return self._eval(x, t, need_grad=False)[0]

    def grad_phi(self, x, t):
        return self._eval(x, t)[1]

    def dphi_dt(self, x, t):
        return self._eval(x, t)[2]

    def normal_speeds(self, x, t):
        x = _as_points(x)
        _, g, dphi = self._eval(x, t)
        norm = np.sqrt(np.einsum("...i,...i->...", g, g))
        if np.any(norm <= GRAD_TOL):
            raise ValueError("level set gradient vanishes; normal undefined")
        wn = -dphi / norm
        return self._material_normal_speed(x, t, g / norm[..., None], wn), wn

    def _blend(self, x):
        return np.tanh(np.abs(x[..., 0]) / self.blend_width)

    def material_velocity(self, x, t):
        x = _as_points(x)
        _, g, dphi = self._eval(x, t)
        norm2 = np.einsum("...i,...i->...", g, g)
        if np.any(norm2 <= GRAD_TOL**2):
            raise ValueError("level set gradient vanishes; normal undefined")
        wn = -(dphi / norm2)[..., None] * g
        s = self._blend(x)[..., None]
        drift = np.zeros_like(x)
        drift[..., 0] = -np.sign(x[..., 0]) * self.w
        return (1.0 - s) * wn + s * drift

    def _material_normal_speed(self, x, t, n, wn):
        x = _as_points(x)
        s = self._blend(x)
        return (1.0 - s) * wn - s * np.sign(x[..., 0]) * self.w * n[..., 0]

    def seeds(self, t):
        a = abs(1.5 - self.w * t)
        f = lambda s: 1.0 - (s - a) ** -3.0 - (s + a) ** -3.0
        s = brentq(f, a + 0.5, a + 3.0, xtol=1e-15)
        return np.array([[s, 0, 0], [-s, 0, 0]])


@dataclass
class SplittingSpheres(ScenarioField):
    """Reverse of the collision: a sphere at the origin pulled apart along x1.

    Realized as the colliding field with speed ``w`` evaluated at t - 1.5/|w|,
    so the centres sit at +-(|w| t, 0, 0).
    """

    w: float = -1.0
    blend_width: float = 0.1
    _base: CollidingSpheres = field(init=False, repr=False)

    def __post_init__(self):
        if self.w >= 0:
            raise ValueError("splitting requires w < 0")
        self._base = CollidingSpheres(self.w, self.blend_width)

    def shift(self, t):
        return t - 1.5 / abs(self.w)

    def phi(self, x, t):
        return self._base.phi(x, self.shift(t))

    def grad_phi(self, x, t):
        return self._base.grad_phi(x, self.shift(t))

    def dphi_dt(self, x, t):
        return self._base.dphi_dt(x, self.shift(t))

    def material_velocity(self, x, t):
        return self._base.material_velocity(x, self.shift(t))

    def normal_speeds(self, x, t):
        return self._base.normal_speeds(x, self.shift(t))

    def seeds(self, t):
        return self._base.seeds(self.shift(t))


@dataclass
class FrozenField(ScenarioField):
    """A scenario surface held fixed at time ``t_freeze`` (zero velocity)."""

    base: ScenarioField
    t_freeze: float = 0.0

    def phi(self, x, t):
        return self.base.phi(x, self.t_freeze)

    def grad_phi(self, x, t):
        return self.base.grad_phi(x, self.t_freeze)

    def dphi_dt(self, x, t):
        return np.zeros(np.shape(x)[:-1])

    def material_velocity(self, x, t):
        return np.zeros(np.shape(x))

    def normal_speeds(self, x, t):
        z = np.zeros(np.shape(x)[:-1])
        return z, z

    def seeds(self, t):
        return self.base.seeds(self.t_freeze)


@dataclass
class DiscreteLevelSet:
    """Nodal P1 interpolant of phi at a fixed time on the h and h/2 lattices.

    Node values are evaluated lazily from the analytic field.
    """

    field: ScenarioField
    lattice: LatticeSpec
    t: float

    @property
    def fine(self) -> LatticeSpec:
        return self.lattice.refined()

    @property
    def scale(self) -> float:
        return self.lattice.h

    def coarse_values(self, nodes) -> np.ndarray:
        return self.field.phi(node_position(self.lattice, nodes), self.t)

    def fine_values(self, nodes) -> np.ndarray:
        return self.field.phi(node_position(self.fine, nodes), self.t)


def interpolate_nodal(field: ScenarioField, lattice: LatticeSpec, t: float) -> DiscreteLevelSet:
    return DiscreteLevelSet(field, lattice, t)
