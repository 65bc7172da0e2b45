from __future__ import annotations

import math

import numpy as np
import pytest

from tracech import cutgeom as cg
from tracech import lattice as lat
from tracech.assembly import ModelParams
from tracech.levelset import MovingSphere
from tracech.scenarios import BOX_RIGID, BOX_SPHERE
from tracech.solver import SolveReport, SolverError
from tracech.timeloop import (CSV_FIELDS, ConstantIC, CosineIC, PiecewiseIC, Profile, RandomIC,
                              RotatedProfile, Schedule, Simulation, SolverOptions, evaluate_ic, read_csv,
                              steady_profile, write_csv)


def _sim(level=1, field=None, dt=0.01, **kw):
    field = MovingSphere() if field is None else field
    box = BOX_SPHERE if not any(field.velocity) else BOX_RIGID
    return Simulation(field, lat.LatticeSpec.from_level(level, *box), ModelParams(epsilon=0.1, dt=dt), **kw)


def test_schedule_steps():
    s = Schedule([(0.0, 0.1)], 0.35)
    steps = s.steps()
    assert [t for t, _ in steps] == pytest.approx([0.1, 0.2, 0.3, 0.35])
    assert steps[-1][1] == pytest.approx(0.05)
    two = Schedule([(0.0, 0.01), (0.02, 0.1)], 0.22).steps()
    assert [t for t, _ in two] == pytest.approx([0.01, 0.02, 0.12, 0.22])
    assert sum(dt for _, dt in two) == pytest.approx(0.22)
    assert len(Schedule([(0.0, 0.1)], 1.0).steps()) == 10
    with pytest.raises(ValueError):
        Schedule([(0.0, 0.0)], 1.0)
    with pytest.raises(ValueError):
        Schedule([(0.5, 0.1)], 0.2)
    with pytest.raises(ValueError):
        Schedule([], 1.0)


def test_initial_conditions():
    x = np.array([[0.1, -0.2, 0.3], [-0.5, 0.0, 0.9]])
    p = ModelParams(epsilon=0.1, dt=0.01)
    np.testing.assert_allclose(evaluate_ic(Profile(axis=2), x, p), steady_profile(x[:, 2], 0.0, 0.1))
    assert steady_profile(0.0, 0.0, 0.1) == 0.5
    r = RotatedProfile(axis=1, angle=math.pi / 2, about=2)
    np.testing.assert_allclose(evaluate_ic(r, x, p), steady_profile(-x[:, 0], 0.0, 0.1), atol=1e-15)
    a = evaluate_ic(RandomIC(seed=3), x, p)
    np.testing.assert_array_equal(a, evaluate_ic(RandomIC(seed=3), x, p))
    assert np.all((a >= 0) & (a <= 1))
    pw = evaluate_ic(PiecewiseIC(ConstantIC(0.2), ConstantIC(0.7)), x, p)
    np.testing.assert_allclose(pw, [0.7, 0.2])
    np.testing.assert_allclose(evaluate_ic(CosineIC(), np.zeros((1, 3)), p), 0.55)
    with pytest.raises(ValueError):
        evaluate_ic("bogus", x, p)


@pytest.mark.parametrize("value", [0.0, 0.5, 1.0])
def test_constant_state_is_fixed(value):
    sim = _sim()
    res = sim.run(Schedule([(0.0, 0.01)], 0.03), ConstantIC(value))
    assert np.abs(res.state.c - value).max() <= 100 * sim.solver.tol
    assert np.ptp(res.state.mu) <= 100 * sim.solver.tol


def test_stationary_energy_decreases_and_mass_is_kept():
    sim = _sim()
    res = sim.run(Schedule([(0.0, 0.01)], 0.1), RandomIC(seed=1))
    e = np.array([r.energy for r in res.records])
    m = np.array([r.mass for r in res.records])
    assert np.all(np.diff(e) <= 10 * sim.solver.tol * max(1.0, e[0]))
    area = res.surface.area
    assert np.abs(m - m[0]).max() <= 10 * sim.solver.tol * area
    assert all(r.gmres_iters > 0 for r in res.records[1:])


def test_moving_sphere_step_records():
    sim = _sim(field=MovingSphere((1.0, 0, 0)))
    res = sim.run(Schedule([(0.0, 0.01)], 0.03), Profile(axis=0))
    assert len(res.records) == 4
    assert all(r.inclusion_margin > 0 for r in res.records[1:])
    assert res.state.band.t == pytest.approx(0.03)


def test_inclusion_violation_aborts():
    sim = _sim(field=MovingSphere((1.0, 0, 0)))
    state, surface, _ = sim.initialize(ConstantIC(0.5), 0.0, 0.01)
    with pytest.raises(cg.InclusionError, match="leaves the previous narrow band"):
        sim.step(state, surface, 0.3, 0.3)


def test_solver_failure_aborts():
    sim = _sim(solver=SolverOptions(maxit=2, preconditioner="none"))
    with pytest.raises(SolverError):
        sim.run(Schedule([(0.0, 0.01)], 0.01), RandomIC(seed=0))


def test_csv_roundtrip(tmp_path):
    sim = _sim()
    res = sim.run(Schedule([(0.0, 0.01)], 0.02), RandomIC(seed=0))
    path = tmp_path / "steps.csv"
    write_csv(res.records, path)
    assert path.read_text().splitlines()[0] == ",".join(CSV_FIELDS)
    back = read_csv(path)
    assert [r.row() for r in back[1:]] == [r.row() for r in res.records[1:]]
    assert math.isnan(back[0].inclusion_margin)


def test_stalled_ilu_falls_back_to_jacobi(monkeypatch):
    import tracech.timeloop as tl
    calls = []
    real = tl.solve

    def flaky(a, b, tol, maxit, prec, x0=None, restart=100):
        calls.append(prec.kind)
        x, rep = real(a, b, tol, maxit, prec, x0=x0, restart=restart)
        if len(calls) == 1:
            return x, SolveReport(maxit, 1e-3, False, 0.0, "maximum iterations exceeded")
        return x, rep

    monkeypatch.setattr(tl, "solve", flaky)
    sim = _sim(solver=SolverOptions(preconditioner="ilu0"))
    res = sim.run(Schedule([(0.0, 0.01)], 0.01), RandomIC(seed=0))
    assert calls == ["ilu0", "jacobi"]
    assert res.records[-1].gmres_iters >= sim.solver.maxit
