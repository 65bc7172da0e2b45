"""Distance and area error of the extracted sphere over refinement levels."""
from __future__ import annotations

import argparse

import numpy as np

from tracech import cutgeom as cg
from tracech import lattice as lat
from tracech.cli import fit_rate
from tracech.levelset import DiscreteLevelSet, MovingSphere
from tracech.scenarios import BOX_SPHERE


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, nargs="+", default=[1, 2, 3, 4])
    args = ap.parse_args()
    field = MovingSphere()
    rows = []
    for level in args.levels:
        spec = lat.LatticeSpec.from_level(level, *BOX_SPHERE)
        s = cg.extract_surface(DiscreteLevelSet(field, spec, 0.0))
        d = np.abs(field.phi(s.qpoints, 0.0)).max()
        rows.append((level, spec.h, len(s.triangles), d, abs(s.area - 4 * np.pi)))
        print(f"level {level}: h={spec.h:.4g} triangles={rows[-1][2]} dist={d:.3e} area_err={rows[-1][4]:.3e}")
    if len(rows) > 1:
        h = [r[1] for r in rows]
        print(f"rates: dist {fit_rate(h, [r[3] for r in rows]):.3f}  area {fit_rate(h, [r[4] for r in rows]):.3f}")


if __name__ == "__main__":
    main()
