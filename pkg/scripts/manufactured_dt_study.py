"""Test 1b errors at one level for several time steps (separates space and time error)."""
from __future__ import annotations

import argparse

from tracech.cli import run_config
from tracech.config import parse_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--level", type=int, default=2)
    ap.add_argument("--dt", type=float, nargs="+", default=None,
                    help="time steps; default is the level's law and two halvings")
    ap.add_argument("--output", default="runs/dt_study")
    args = ap.parse_args()
    law = 4.0 ** (1 - args.level) / 10
    dts = args.dt or [law, law / 2, law / 4]
    print(f"{'dt':>12} {'c_l2':>11} {'mu_l2':>11} {'c_h1':>11} {'mu_h1':>11}")
    for dt in dts:
        cfg = parse_config(f"[scenario]\nname = test1b\nlevel = {args.level}\n[time]\ndt = {dt!r}\n"
                           f"[output]\ndir = {args.output}/l{args.level}_dt{dt:.3g}\n")
        n = run_config(cfg)["norms"]
        print(f"{dt:>12.5g} " + " ".join(f"{n[k]:>11.4e}" for k in ("c_l2", "mu_l2", "c_h1", "mu_h1")), flush=True)


if __name__ == "__main__":
    main()
