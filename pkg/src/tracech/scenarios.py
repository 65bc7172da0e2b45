"""Benchmark presets and the rigid-motion manufactured solution."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .assembly import potential
from .levelset import (CollidingSpheres, FrozenField, MovingSphere, OscillatingEllipsoid,
                       ScenarioField, SplittingSpheres)
from .timeloop import (ConstantIC, CosineIC, PiecewiseIC, Profile, RandomIC, RotatedProfile,
                       Schedule)

BOX_SPHERE = ((-5 / 3, -5 / 3, -5 / 3), (5 / 3, 5 / 3, 5 / 3))
BOX_RIGID = ((-5 / 3, -5 / 3, -5 / 3), (10 / 3, 5 / 3, 5 / 3))
BOX_PAIR = ((-10 / 3, -5 / 3, -5 / 3), (10 / 3, 5 / 3, 5 / 3))
BOX_HALF = ((-10 / 3, -5 / 3, -5 / 3), (0.0, 5 / 3, 5 / 3))


@dataclass
class ManufacturedSolution:
    """c* = (Y(q) + 1)/2 with Y = q1 q2 riding a rigidly moving unit sphere.

    q is the body-frame image of the closest point, so c*, mu* are normal
    extensions. On the unit sphere Y is a degree-2 harmonic: Lap_G Y = -6 Y.
    """

    sphere: MovingSphere
    epsilon: float
    sigma: float = 1.0

    def _offsets(self, x, t):
        d = np.asarray(x, dtype=float) - self.sphere.center(t)
        r = np.linalg.norm(d, axis=-1)
        # the extension is undefined at the centre; a wide band may contain it
        at_centre = r == 0
        if np.any(at_centre):
            d = np.where(at_centre[..., None], [0.0, 0.0, 1e-300], d)
            r = np.where(at_centre, 1e-300, r)
        return d, r

    def _q(self, x, t):
        d, r = self._offsets(x, t)
        return (d / r[..., None]) @ self.sphere.rotation(t)

    def _frame(self, x, t):
        # d q / d x = R^T (I - d d^T) / r, applied as a row-vector map
        d, r = self._offsets(x, t)
        return d / r[..., None], r, self.sphere.rotation(t)

    def _ambient(self, gq, x, t):
        dh, r, R = self._frame(x, t)
        gx = gq @ R.T
        gx = gx - np.sum(gx * dh, axis=-1, keepdims=True) * dh
        return gx / r[..., None]

    def Y(self, x, t):
        q = self._q(x, t)
        return q[..., 0] * q[..., 1]

    def c(self, x, t):
        return 0.5 * (self.Y(x, t) + 1.0)

    def mu(self, x, t):
        y = self.Y(x, t)
        _, d1, _ = potential(0.5 * (y + 1.0))
        return d1 / self.epsilon + 3.0 * self.epsilon * y

    def _grad_Y(self, x, t):
        q = self._q(x, t)
        gq = np.stack([q[..., 1], q[..., 0], np.zeros_like(q[..., 0])], axis=-1)
        return self._ambient(gq, x, t)

    def grad_c(self, x, t):
        return 0.5 * self._grad_Y(x, t)

    def grad_mu(self, x, t):
        c = self.c(x, t)
        _, _, d2 = potential(c)
        A = d2 / (2 * self.epsilon) + 3 * self.epsilon
        return A[..., None] * self._grad_Y(x, t)

    def forcing_body(self, q):
        """g = -div_G(M(c*) grad_G mu*) as a function of body-frame unit vectors."""
        q = np.asarray(q, dtype=float)
        y = q[..., 0] * q[..., 1]
        c = 0.5 * (y + 1.0)
        eps = self.epsilon
        _, _, d2 = potential(c)
        A = d2 / (2 * eps) + 3 * eps
        dA = (-3.0 + 6.0 * c) / (4 * eps)
        M = self.sigma * c * (1 - c)
        dM = self.sigma * (1 - 2 * c) / 2
        F, dF = M * A, dM * A + M * dA
        grad2 = q[..., 0] ** 2 + q[..., 1] ** 2 - 4 * y**2
        return -(dF * grad2 - 6.0 * F * y)

    def g(self, x, t):
        return self.forcing_body(self._q(x, t))


@dataclass
class Preset:
    name: str
    make_field: Callable[[], ScenarioField]
    box: tuple
    epsilon: float
    phases: Callable[[int], list]          # level -> [(t_start, dt), ...]
    t_end: float
    ic: object
    sigma: float = 1.0
    exact: bool = False
    notes: str = ""

    def field(self, offset=(0.0, 0.0, 0.0)) -> ScenarioField:
        f = self.make_field()
        if any(offset):
            if not isinstance(f, MovingSphere):
                raise ValueError("center offsets are only supported for sphere scenarios")
            f.center0 = tuple(np.asarray(f.center0, float) + np.asarray(offset, float))
        return f

    def schedule(self, level: int) -> Schedule:
        return Schedule(self.phases(level), self.t_end)

    def manufactured(self, field: ScenarioField, epsilon: float, sigma: float) -> ManufacturedSolution | None:
        if not self.exact:
            return None
        return ManufacturedSolution(field, epsilon, sigma)


def _uniform(t0, dt):
    return lambda level: [(t0, dt)]


_T1B_V = (10.0, 0.0, 0.0)
_TS_SLOW, _TS_FAST = 0.23, 0.023

PRESETS: dict[str, Preset] = {p.name: p for p in [
    Preset("test1a", lambda: MovingSphere((1.0, 0, 0), (1.0, 0, 0)), BOX_RIGID, 0.1,
           _uniform(0.0, 0.01), 1.0, Profile(axis=1)),
    Preset("test1b", lambda: MovingSphere(_T1B_V, _T1B_V), BOX_RIGID, 0.1,
           lambda level: [(0.0, 4.0 ** (1 - level) / 10)], 0.1, "exact", exact=True),
    Preset("test2a", lambda: OscillatingEllipsoid(k=1), BOX_SPHERE, 0.1, _uniform(0.0, 0.01), 1.0, CosineIC()),
    Preset("test2b", lambda: OscillatingEllipsoid(k=1), BOX_SPHERE, 0.01, _uniform(0.0, 0.01), 1.0, CosineIC()),
    Preset("test2c", lambda: OscillatingEllipsoid(k=5), BOX_SPHERE, 0.1, _uniform(0.0, 0.001), 1.0, CosineIC(),
           sigma=16.0),
    Preset("stationary_sphere", lambda: MovingSphere(), BOX_SPHERE, 0.1, _uniform(0.0, 0.01), 1.0,
           RandomIC(seed=0)),
    Preset("collide_preseparated", lambda: CollidingSpheres(w=1.0), BOX_PAIR, 0.01, _uniform(0.0, 1e-3), 1.0,
           PiecewiseIC(Profile(axis=1, center=(-1.5, 0.0, 0.0)), Profile(axis=0, center=(1.5, 0.0, 0.0)))),
    Preset("collide_slow", lambda: CollidingSpheres(w=1.0), BOX_PAIR, 0.01,
           lambda level: [(_TS_SLOW, 1e-4), (_TS_SLOW + 0.01, 1e-2)], 1.0 + _TS_SLOW,
           PiecewiseIC(RandomIC(seed=0), ConstantIC(0.0))),
    Preset("collide_fast", lambda: CollidingSpheres(w=10.0), BOX_PAIR, 0.01,
           lambda level: [(_TS_FAST, 1e-4), (_TS_FAST + 0.01, 1e-3)], 0.1 + _TS_FAST,
           PiecewiseIC(RandomIC(seed=0), ConstantIC(0.0))),
    Preset("single_ball", lambda: FrozenField(CollidingSpheres(w=1.0), _TS_SLOW), BOX_HALF, 0.01,
           _uniform(0.0, 1e-2), 1.0, RandomIC(seed=0)),
    Preset("hourglass", lambda: FrozenField(CollidingSpheres(w=1.0), _TS_SLOW + 0.02), BOX_PAIR, 0.01,
           _uniform(0.0, 1e-2), 1.0, PiecewiseIC(RandomIC(seed=0), ConstantIC(0.0))),
    Preset("split_rotated", lambda: SplittingSpheres(w=-1.0), BOX_PAIR, 0.01, _uniform(0.0, 1e-3), 1.5,
           RotatedProfile(axis=1, angle=math.pi / 4, about=2)),
    Preset("split_horizontal", lambda: SplittingSpheres(w=-1.0), BOX_PAIR, 0.01, _uniform(0.0, 1e-3), 1.37,
           Profile(axis=2, delta=20.0)),
]}


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass
class ExactIC:
    """Initial condition sampled from a manufactured solution at t = 0."""
    solution: ManufacturedSolution = dc_field(repr=False)

    def __call__(self, x, params, rng):
        return self.solution.c(x, 0.0)
