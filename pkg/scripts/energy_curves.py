"""Lyapunov energy histories of one scenario at several levels, written to one CSV."""
from __future__ import annotations

import argparse
import csv
import os

import numpy as np

from tracech.cli import build
from tracech.config import parse_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="test2a")
    ap.add_argument("--levels", type=int, nargs="+", default=[3, 4])
    ap.add_argument("--t-end", type=float, default=None)
    ap.add_argument("--output", default="runs/energy_curves.csv")
    args = ap.parse_args()
    curves = {}
    for level in args.levels:
        text = f"[scenario]\nname = {args.scenario}\nlevel = {level}\n"
        if args.t_end is not None:
            text += f"[time]\nt_end = {args.t_end!r}\n"
        setup = build(parse_config(text))
        res = setup.sim.run(setup.schedule, setup.ic)
        curves[level] = [(r.time, r.energy) for r in res.records]
        e = np.array([v for _, v in curves[level]])
        print(f"level {level}: E {e[0]:.5g} -> {e[-1]:.5g}, max growth {np.max(e[1:] / e[:-1]):.4f}", flush=True)
    os.makedirs(os.path.dirname(args.output) or ".", exist_ok=True)
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"energy_l{lv}" for lv in args.levels])
        for k, (t, _) in enumerate(curves[args.levels[0]]):
            w.writerow([t] + [curves[lv][k][1] for lv in args.levels])
    ref = np.array([v for _, v in curves[args.levels[-1]]])
    for lv in args.levels[:-1]:
        e = np.array([v for _, v in curves[lv]])
        print(f"sup |E{lv} - E{args.levels[-1]}| / sup E = {np.abs(e - ref).max() / np.abs(ref).max():.4f}")
    print(f"wrote {args.output}")


if __name__ == "__main__":
    main()
