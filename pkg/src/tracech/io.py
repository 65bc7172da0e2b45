"""Legacy ASCII VTK output of the discrete surface with c and mu."""
from __future__ import annotations

import os

import numpy as np

from .assembly import SystemState, evaluate_prev
from .cutgeom import CutSurface


def _fmt(v: float) -> str:
    return repr(float(v))


def vtk_text(points: np.ndarray, c: np.ndarray, mu: np.ndarray, title: str = "tracech surface") -> str:
    """VTK POLYDATA text for triangles given as (M, 3, 3) points and per-vertex values (M, 3)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    m = len(pts) // 3
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET POLYDATA",
             f"POINTS {len(pts)} double"]
    lines += [" ".join(_fmt(v) for v in p) for p in pts]
    lines.append(f"POLYGONS {m} {4 * m}")
    lines += [f"3 {3 * k} {3 * k + 1} {3 * k + 2}" for k in range(m)]
    lines.append(f"POINT_DATA {len(pts)}")
    for name, vals in (("c", c), ("mu", mu)):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [_fmt(v) for v in np.asarray(vals, dtype=float).ravel()]
    return "\n".join(lines) + "\n"


def write_vtk(surface: CutSurface, state: SystemState, path) -> None:
    """Write triangles with P1 values of c and mu at their (duplicated) vertices."""
    cells = np.repeat(surface.parents, 3)
    x = surface.triangles.reshape(-1, 3)
    c, _ = evaluate_prev(state.c, state.band, x, cells)
    mu, _ = evaluate_prev(state.mu, state.band, x, cells)
    text = vtk_text(surface.triangles, c, mu)
    d = os.path.dirname(os.fspath(path))
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
