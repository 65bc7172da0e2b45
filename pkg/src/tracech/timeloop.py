"""Time marching: geometry rebuild, band inclusion check, assembly, solve, diagnostics."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field as dc_field, replace
from typing import Callable, Sequence

import numpy as np

from . import cutgeom as cg
from . import lattice as lat
from .assembly import (FESystem, ModelParams, SystemState, assemble, evaluate_prev, potential,
                       tangential_gradient)
from .lattice import LatticeSpec
from .levelset import DiscreteLevelSet, ScenarioField
from .solver import Preconditioner, SolverError, solve

log = logging.getLogger(__name__)

CSV_FIELDS = ("time", "dt", "energy", "mass", "band_cells", "active_nodes",
              "gmres_iters", "residual", "inclusion_margin")


@dataclass
class StepRecord:
    time: float
    dt: float
    energy: float
    mass: float
    band_cells: int
    active_nodes: int
    gmres_iters: int
    residual: float
    inclusion_margin: float

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_FIELDS}


@dataclass
class Schedule:
    """Contiguous phases (t_start, dt) ending at t_end."""

    phases: list
    t_end: float

    def __post_init__(self):
        self.phases = [(float(a), float(b)) for a, b in self.phases]
        if not self.phases:
            raise ValueError("schedule needs at least one phase")
        for i, (t0, dt) in enumerate(self.phases):
            if not dt > 0:
                raise ValueError("time steps must be positive")
            nxt = self.phases[i + 1][0] if i + 1 < len(self.phases) else self.t_end
            if not nxt > t0:
                raise ValueError("phases must be increasing and end before t_end")

    @classmethod
    def uniform(cls, t0: float, t_end: float, dt: float) -> "Schedule":
        return cls([(t0, dt)], t_end)

    @property
    def t_start(self) -> float:
        return self.phases[0][0]

    def steps(self) -> list[tuple[float, float]]:
        """(t_n, dt_n) for every step; a phase ends exactly at the next phase start."""
        out = []
        for i, (t0, dt) in enumerate(self.phases):
            t1 = self.phases[i + 1][0] if i + 1 < len(self.phases) else self.t_end
            n = (t1 - t0) / dt
            k = int(round(n))
            if abs(n - k) > 1e-9 * max(1.0, n):
                k = int(math.ceil(n))
            for j in range(1, k + 1):
                t = t1 if j == k else t0 + j * dt
                prev = out[-1][0] if out else t0
                out.append((t, t - prev))
        return out


# --- initial conditions ------------------------------------------------------------------

def steady_profile(s, delta: float, epsilon: float):
    return 0.5 * (1.0 + np.tanh(delta + np.asarray(s) / (2.0 * math.sqrt(2.0) * epsilon)))


@dataclass
class Profile:
    axis: int                 # 0, 1 or 2
    delta: float = 0.0
    center: tuple = (0.0, 0.0, 0.0)
    epsilon: float | None = None

    def __call__(self, x, params, rng):
        eps = params.epsilon if self.epsilon is None else self.epsilon
        return steady_profile(x[..., self.axis] - self.center[self.axis], self.delta, eps)


@dataclass
class RotatedProfile:
    """Profile along ``axis`` after rotating the points by -angle about ``about``."""
    axis: int = 1
    angle: float = math.pi / 4
    about: int = 2
    delta: float = 0.0
    epsilon: float | None = None

    def __call__(self, x, params, rng):
        i, j = [k for k in range(3) if k != self.about]
        ca, sa = math.cos(self.angle), math.sin(self.angle)
        y = np.array(x, dtype=float, copy=True)
        y[..., i] = ca * x[..., i] + sa * x[..., j]
        y[..., j] = -sa * x[..., i] + ca * x[..., j]
        eps = params.epsilon if self.epsilon is None else self.epsilon
        return steady_profile(y[..., self.axis], self.delta, eps)


@dataclass
class RandomIC:
    seed: int = 0
    low: float = 0.0
    high: float = 1.0

    def __call__(self, x, params, rng):
        return rng.uniform(self.low, self.high, size=x.shape[:-1])


@dataclass
class ConstantIC:
    value: float = 0.5

    def __call__(self, x, params, rng):
        return np.full(x.shape[:-1], float(self.value))


@dataclass
class CosineIC:
    """mean + amplitude * prod_i cos(2 pi x_i)."""
    mean: float = 0.5
    amplitude: float = 0.05

    def __call__(self, x, params, rng):
        return self.mean + self.amplitude * np.prod(np.cos(2 * np.pi * x), axis=-1)


@dataclass
class PiecewiseIC:
    """``negative`` where x1 <= 0, ``positive`` elsewhere."""
    negative: object
    positive: object

    def __call__(self, x, params, rng):
        a = self.negative(x, params, rng)
        b = self.positive(x, params, rng)
        return np.where(x[..., 0] <= 0, a, b)


def _seed_of(ic) -> int:
    if isinstance(ic, RandomIC):
        return ic.seed
    if isinstance(ic, PiecewiseIC):
        return _seed_of(ic.negative) or _seed_of(ic.positive)
    return 0


def evaluate_ic(ic, x, params) -> np.ndarray:
    if not callable(ic):
        raise ValueError(f"unknown initial condition spec {ic!r}")
    rng = np.random.default_rng(_seed_of(ic))
    return np.asarray(ic(np.asarray(x, dtype=float), params, rng), dtype=float)


# --- diagnostics ---------------------------------------------------------------------------

def surface_values(state: SystemState, surface: cg.CutSurface, which: str = "c"):
    """Value and ambient P1 gradient of c or mu at the surface quadrature points."""
    vec = state.c if which == "c" else state.mu
    return evaluate_prev(vec, state.band, surface.qpoints, surface.parents)


def lyapunov_energy(state: SystemState, surface: cg.CutSurface, epsilon: float) -> float:
    c, g = surface_values(state, surface)
    gt = tangential_gradient(g, surface.qnormals)
    f0, _, _ = potential(c)
    return surface.integrate(f0 / epsilon + 0.5 * epsilon * np.sum(gt * gt, axis=-1))


def total_mass(state: SystemState, surface: cg.CutSurface) -> float:
    c, _ = surface_values(state, surface)
    return surface.integrate(c)


class ErrorAccumulator:
    """Discrete L2(0,T; L2) and L2(0,T; H1) errors against an exact solution.

    ``exact`` must provide c, mu, grad_c, grad_mu as functions of (x, t).
    """

    def __init__(self, exact, t_final: float):
        self.exact = exact
        self.T = t_final
        self.sums = dict(c_l2=0.0, mu_l2=0.0, c_h1=0.0, mu_h1=0.0)
        self.steps = 0

    def add(self, state: SystemState, surface: cg.CutSurface, dt: float):
        x, t, n = surface.qpoints, surface.t, surface.qnormals
        for name in ("c", "mu"):
            val, grad = surface_values(state, surface, name)
            ev = getattr(self.exact, name)(x, t) - val
            eg = tangential_gradient(getattr(self.exact, "grad_" + name)(x, t) - grad, n)
            self.sums[name + "_l2"] += dt * surface.integrate(ev**2)
            self.sums[name + "_h1"] += dt * surface.integrate(np.sum(eg * eg, axis=-1))
        self.steps += 1

    def norms(self) -> dict:
        return {k: math.sqrt(v / self.T) for k, v in self.sums.items()}


def error_norms(states: Sequence[SystemState], surfaces: Sequence[cg.CutSurface], dts, exact, t_final: float) -> dict:
    acc = ErrorAccumulator(exact, t_final)
    for s, g, dt in zip(states, surfaces, dts):
        acc.add(s, g, dt)
    return acc.norms()


# --- the time loop -----------------------------------------------------------------------------

@dataclass
class SolverOptions:
    tol: float = 1e-9
    maxit: int = 2000
    preconditioner: str = "ilu0"
    restart: int = 100


@dataclass
class Simulation:
    field: ScenarioField
    lattice: LatticeSpec
    params: ModelParams
    c_delta: float = 1.0
    solver: SolverOptions = dc_field(default_factory=SolverOptions)
    forcing: Callable | None = None   # g(x, t) at quadrature points

    def geometry(self, t: float, hint=None) -> cg.CutSurface:
        dls = DiscreteLevelSet(self.field, self.lattice, t)
        return cg.extract_surface(dls, hint, self.params.quad_degree)

    def band(self, surface: cg.CutSurface, dt_next: float) -> cg.NarrowBand:
        bound = cg.velocity_bound(self.field, surface, dt_next)
        delta = cg.band_width(dt_next, bound, self.c_delta)
        return cg.select_band(DiscreteLevelSet(self.field, self.lattice, surface.t), surface, delta)

    def initialize(self, ic, t0: float, dt_next: float):
        surface = self.geometry(t0)
        band = self.band(surface, dt_next)
        c0 = evaluate_ic(ic, band.node_positions(), self.params)
        state = SystemState(c0, np.zeros_like(c0), band, t0)
        rec = StepRecord(t0, 0.0, lyapunov_energy(state, surface, self.params.epsilon),
                         total_mass(state, surface), len(band.cells), band.n_nodes, 0, 0.0, float("nan"))
        return state, surface, rec

    def _initial_guess(self, prev: SystemState, band: cg.NarrowBand) -> np.ndarray:
        pos = np.clip(np.searchsorted(prev.band.nodes, band.nodes), 0, len(prev.band.nodes) - 1)
        hit = prev.band.nodes[pos] == band.nodes
        c = np.where(hit, prev.c[pos], prev.c.mean())
        mu = np.where(hit, prev.mu[pos], prev.mu.mean())
        return np.concatenate([c, mu])

    def step(self, prev: SystemState, prev_surface: cg.CutSurface, t: float, dt: float,
             dt_next: float | None = None):
        """Advance from prev (at t - dt) to t; returns (state, surface, record, system)."""
        surface = self.geometry(t, prev_surface.fine_cubes)
        ok, worst, margin = cg.check_inclusion(prev.band, surface)
        if not ok:
            raise cg.InclusionError(
                f"surface at t={t:.6g} leaves the previous narrow band near {worst}; "
                f"reduce dt (currently {dt:g}) or increase c_delta")
        c_prev, _ = evaluate_prev(prev.c, prev.band, surface.qpoints, surface.parents)
        band = self.band(surface, dt if dt_next is None else dt_next)
        params = self.params if self.params.dt == dt else _with_dt(self.params, dt)
        velocity = self.field.material_velocity(surface.qpoints, t)
        g = None if self.forcing is None else self.forcing(surface.qpoints, t)
        system = assemble(band, surface, params, self.field, velocity, c_prev, g)
        x, report = self.solve(system, self._initial_guess(prev, band))
        N = band.n_nodes
        state = SystemState(x[:N].copy(), x[N:].copy(), band, t)
        rec = StepRecord(t, dt, lyapunov_energy(state, surface, params.epsilon), total_mass(state, surface),
                         len(band.cells), N, report.iterations, report.residual, margin)
        return state, surface, rec, system

    def solve(self, system: FESystem, x0=None):
        opts = self.solver
        prec = Preconditioner(system.matrix, opts.preconditioner, fields=2)
        x, report = solve(system.matrix, system.rhs, opts.tol, opts.maxit, prec, x0=x0, restart=opts.restart)
        if not report.converged and prec.kind == "ilu0":
            # the growth probe can miss an unstable factorization; Jacobi is slower but safe
            log.warning("GMRES with ILU(0) stalled at residual %.3e; retrying with Jacobi", report.residual)
            first = report.iterations
            prec = Preconditioner(system.matrix, "jacobi", fields=2)
            x, report = solve(system.matrix, system.rhs, opts.tol, opts.maxit, prec, x0=x, restart=opts.restart)
            report = replace(report, iterations=first + report.iterations)
        if not report.converged:
            raise SolverError(report)
        return x, report

    def run(self, schedule: Schedule, ic, observers: Sequence[Callable] = ()):
        """March over the schedule; observers are called as f(state, surface, record)."""
        steps = schedule.steps()
        state, surface, rec = self.initialize(ic, schedule.t_start, steps[0][1])
        records = [rec]
        for obs in observers:
            obs(state, surface, rec)
        for k, (t, dt) in enumerate(steps):
            dt_next = steps[k + 1][1] if k + 1 < len(steps) else dt
            state, surface, rec, _ = self.step(state, surface, t, dt, dt_next)
            records.append(rec)
            log.info("t=%.6g E=%.6g mass=%.6g nodes=%d its=%d margin=%.3g",
                     t, rec.energy, rec.mass, rec.active_nodes, rec.gmres_iters, rec.inclusion_margin)
            for obs in observers:
                obs(state, surface, rec)
        return RunResult(records, state, surface)


def _with_dt(params: ModelParams, dt: float) -> ModelParams:
    return replace(params, dt=dt)


@dataclass
class RunResult:
    records: list
    state: SystemState
    surface: cg.CutSurface


def write_csv(records: Sequence[StepRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_FIELDS)
        for r in records:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in (getattr(r, k) for k in CSV_FIELDS)])


def read_csv(path) -> list[StepRecord]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        out = []
        for row in rd:
            out.append(StepRecord(**{k: (int(row[k]) if k in ("band_cells", "active_nodes", "gmres_iters")
                                         else float(row[k])) for k in CSV_FIELDS}))
        return out
