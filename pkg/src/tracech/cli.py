"""Command-line driver: ``run``, ``convergence`` and ``sweep-offsets``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import lattice as lat
from .assembly import ModelParams
from .config import ConfigError, RunConfig, echo_config, parse_config, parse_ic
from .cutgeom import InclusionError
from .io import write_vtk
from .scenarios import ExactIC, ManufacturedSolution, get_preset
from .solver import SolverError
from .timeloop import ErrorAccumulator, Schedule, Simulation, SolverOptions, write_csv

log = logging.getLogger("tracech")


@dataclass
class Setup:
    sim: Simulation
    schedule: Schedule
    ic: object
    exact: ManufacturedSolution | None


def build(cfg: RunConfig) -> Setup:
    preset = get_preset(cfg.scenario)
    field = preset.field(cfg.offset)
    spec = lat.LatticeSpec.from_level(cfg.level, *preset.box)
    schedule = cfg.schedule
    params = ModelParams(epsilon=cfg.epsilon, dt=schedule.phases[0][1], sigma=cfg.sigma,
                         beta_s=cfg.beta_s, rho=cfg.rho, quad_degree=cfg.quad_degree)
    exact = preset.manufactured(field, cfg.epsilon, cfg.sigma)
    ic = parse_ic(cfg.ic, cfg.seed)
    if ic == "exact":
        if exact is None:
            raise ConfigError(f"initial condition 'exact' needs a manufactured scenario, not {cfg.scenario!r}")
        ic = ExactIC(exact)
    sim = Simulation(field, spec, params, cfg.c_delta,
                     SolverOptions(cfg.tol, cfg.maxit, cfg.preconditioner, cfg.restart),
                     forcing=exact.g if exact is not None else None)
    return Setup(sim, schedule, ic, exact)


def run_config(cfg: RunConfig) -> dict:
    """Execute a configured run; writes config echo, CSV and VTK files."""
    os.makedirs(cfg.output_dir, exist_ok=True)
    with open(os.path.join(cfg.output_dir, "config.echo"), "w") as fh:
        fh.write(echo_config(cfg))
    setup = build(cfg)
    acc = ErrorAccumulator(setup.exact, setup.schedule.t_end - setup.schedule.t_start) if setup.exact else None
    counter = {"n": 0}

    def observe(state, surface, rec):
        if acc is not None and rec.dt > 0:
            acc.add(state, surface, rec.dt)
        if cfg.vtk_interval and counter["n"] % cfg.vtk_interval == 0:
            write_vtk(surface, state, os.path.join(cfg.output_dir, f"surface_{counter['n']:05d}.vtk"))
        counter["n"] += 1

    result = setup.sim.run(setup.schedule, setup.ic, [observe])
    write_csv(result.records, os.path.join(cfg.output_dir, "steps.csv"))
    return {"records": result.records, "norms": acc.norms() if acc else None, "result": result}


def fit_rate(h, err) -> float:
    """Least-squares slope of log(err) against log(h)."""
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def convergence(scenario: str, levels, output_root: str | None = None, echo=print) -> dict:
    preset = get_preset(scenario)
    if not preset.exact:
        raise ValueError(f"scenario {scenario!r} has no exact solution")
    rows = []
    for level in levels:
        text = f"[scenario]\nname = {scenario}\nlevel = {level}\n"
        if output_root:
            text += f"[output]\ndir = {os.path.join(output_root, f'level{level}')}\n"
        cfg = parse_config(text)
        if not output_root:
            cfg.output_dir = os.path.join(cfg.output_dir, f"level{level}")
        out = run_config(cfg)
        h = lat.mesh_size(level)
        rows.append((level, h, len(out["records"]) - 1, out["norms"]))
        echo(f"level {level}: h={h:.5g} steps={rows[-1][2]} " +
             " ".join(f"{k}={v:.4e}" for k, v in out["norms"].items()))
    keys = list(rows[0][3])
    rates = {k: fit_rate([r[1] for r in rows], [r[3][k] for r in rows]) for k in keys} if len(rows) > 1 else {}
    echo("")
    echo(f"{'level':>5} {'h':>10} {'steps':>6} " + " ".join(f"{k:>12}" for k in keys))
    for level, h, n, norms in rows:
        echo(f"{level:>5} {h:>10.5g} {n:>6} " + " ".join(f"{norms[k]:>12.4e}" for k in keys))
    if rates:
        echo(f"{'rate':>5} {'':>10} {'':>6} " + " ".join(f"{rates[k]:>12.3f}" for k in keys))
    return {"rows": rows, "rates": rates}


def sweep_offsets(n: int = 20, level: int = 3, seed: int = 0, steps: int = 1, echo=print) -> dict:
    """Iteration counts for a stationary sphere shifted by random sub-cell offsets."""
    rng = np.random.default_rng(seed)
    h = lat.mesh_size(level)
    its = []
    for k in range(n):
        off = [float(v) for v in rng.uniform(0.0, h, size=3)]
        cfg = parse_config(
            "[scenario]\nname = stationary_sphere\n"
            f"level = {level}\nic = random(seed={seed + k})\n"
            f"offset = {off[0]!r}, {off[1]!r}, {off[2]!r}\n"
            f"[time]\nt_end = {steps * 0.01!r}\n")
        setup = build(cfg)
        res = setup.sim.run(setup.schedule, setup.ic)
        it = max(r.gmres_iters for r in res.records[1:])
        its.append(it)
        echo(f"offset {k:2d} ({off[0]:+.4f}, {off[1]:+.4f}, {off[2]:+.4f}): gmres iterations {it}")
    ratio = max(its) / max(min(its), 1)
    echo(f"max/min iterations: {max(its)}/{min(its)} = {ratio:.3f}")
    return {"iterations": its, "ratio": ratio}


def _levels(text: str):
    a, sep, b = text.partition("..")
    try:
        if sep:
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must look like 1..3 or 1,2,3, got {text!r}") from None


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tracech", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a configured simulation")
    r.add_argument("--config", required=True)
    r.add_argument("--output")
    c = sub.add_parser("convergence", help="error norms and fitted rates over levels")
    c.add_argument("--scenario", default="test1b")
    c.add_argument("--levels", type=_levels, default=[1, 2, 3])
    c.add_argument("--output")
    s = sub.add_parser("sweep-offsets", help="GMRES iterations under random sub-cell shifts")
    s.add_argument("--n", type=int, default=20)
    s.add_argument("--level", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            with open(args.config, encoding="utf-8") as fh:
                cfg = parse_config(fh.read())
            if args.output:
                cfg.output_dir = args.output
            out = run_config(cfg)
            last = out["records"][-1]
            print(f"done: t={last.time:.6g} energy={last.energy:.6g} mass={last.mass:.6g} -> {cfg.output_dir}")
            if out["norms"]:
                print(" ".join(f"{k}={v:.4e}" for k, v in out["norms"].items()))
        elif args.command == "convergence":
            convergence(args.scenario, args.levels, args.output)
        else:
            if args.n < 1:
                raise ValueError("--n must be positive")
            sweep_offsets(args.n, args.level, args.seed)
    except (ConfigError, ValueError, OSError, InclusionError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
