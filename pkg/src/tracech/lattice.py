"""Implicit structured tetrahedral lattice (Kuhn subdivision of a uniform cube grid).

Cells and nodes are addressed by flat integer ids and realized on demand, so
only the narrow band around the surface is ever materialized.

Cell id layout: ``((i * ny + j) * nz + k) * 6 + t`` where ``(i, j, k)`` is the cube
and ``t`` the Kuhn tetrahedron. Node id layout: ``(i * (ny + 1) + j) * (nz + 1) + k``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

# Kuhn tet t is {y : y[s0] >= y[s1] >= y[s2]} in local cube coordinates, s = PERMS[t].
PERMS = np.array(list(itertools.permutations(range(3))), dtype=np.int64)
_PERM_INDEX = {tuple(p): t for t, p in enumerate(PERMS.tolist())}
_PERM_LOOKUP = np.full(27, -1, dtype=np.int64)
_PERM_LOOKUP[PERMS @ np.array([9, 3, 1])] = np.arange(6)

_EYE = np.eye(3, dtype=np.int64)
KUHN_OFFSETS = np.zeros((6, 4, 3), dtype=np.int64)
for _t, (_a, _b, _c) in enumerate(PERMS):
    KUHN_OFFSETS[_t, 1] = _EYE[_a]
    KUHN_OFFSETS[_t, 2] = _EYE[_a] + _EYE[_b]
    KUHN_OFFSETS[_t, 3] = 1

# cube corner numbering: 4*dx + 2*dy + dz
CUBE_CORNERS = np.array(list(itertools.product((0, 1), repeat=3)), dtype=np.int64)
KUHN_CORNERS = KUHN_OFFSETS @ np.array([4, 2, 1])

# face neighbours: (cube shift, neighbour perm) for the face opposite vertex 0..3
_FACE_SHIFT = np.zeros((6, 4, 3), dtype=np.int64)
_FACE_TET = np.zeros((6, 4), dtype=np.int64)
for _t, (_a, _b, _c) in enumerate(PERMS.tolist()):
    _FACE_SHIFT[_t, 0] = _EYE[_a]
    _FACE_TET[_t, 0] = _PERM_INDEX[(_b, _c, _a)]
    _FACE_TET[_t, 1] = _PERM_INDEX[(_b, _a, _c)]
    _FACE_TET[_t, 2] = _PERM_INDEX[(_a, _c, _b)]
    _FACE_SHIFT[_t, 3] = -_EYE[_c]
    _FACE_TET[_t, 3] = _PERM_INDEX[(_c, _a, _b)]

_FACE_DIRS = np.concatenate([_EYE, -_EYE])


def mesh_size(level: int) -> float:
    """Mesh size of refinement level ``level``: 2**(-level-2) * 10/3."""
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    return 2.0 ** (-level - 2) * 10.0 / 3.0


class CellId(NamedTuple):
    i: int
    j: int
    k: int
    t: int


@dataclass(frozen=True)
class LatticeSpec:
    origin: tuple[float, float, float]
    extents: tuple[float, float, float]
    h: float
    level: int | None = None

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("h must be positive")
        for side in self.extents:
            n = side / self.h
            if n < 0.5 or abs(n - round(n)) > 1e-12 * max(1.0, n):
                raise ValueError(f"box side {side} is not an integer multiple of h={self.h}")

    @classmethod
    def from_level(cls, level: int, lower, upper) -> LatticeSpec:
        lower = tuple(float(v) for v in lower)
        extents = tuple(float(b) - a for a, b in zip(lower, upper))
        return cls(lower, extents, mesh_size(level), level)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(int(round(e / self.h)) for e in self.extents)

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.shape
        return 6 * nx * ny * nz

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(self.extents)

    def refined(self) -> LatticeSpec:
        """The lattice with half the mesh size over the same box."""
        level = None if self.level is None else self.level + 1
        return LatticeSpec(self.origin, self.extents, self.h / 2, level)

    def contains(self, x, tol: float = 1e-12) -> np.ndarray:
        x = np.atleast_2d(x)
        lo = np.asarray(self.origin)
        slack = tol * max(1.0, float(np.max(np.abs(self.extents))))
        return np.all((x >= lo - slack) & (x <= self.upper + slack), axis=1)


# --- id arithmetic --------------------------------------------------------------

def cube_id(spec: LatticeSpec, ijk) -> np.ndarray:
    _, ny, nz = spec.shape
    ijk = np.asarray(ijk, dtype=np.int64)
    return (ijk[..., 0] * ny + ijk[..., 1]) * nz + ijk[..., 2]


def cube_index(spec: LatticeSpec, cid) -> np.ndarray:
    _, ny, nz = spec.shape
    cid = np.asarray(cid, dtype=np.int64)
    return np.stack([cid // (ny * nz), (cid // nz) % ny, cid % nz], axis=-1)


def cell_id(spec: LatticeSpec, ijk, t) -> np.ndarray:
    return cube_id(spec, ijk) * 6 + np.asarray(t, dtype=np.int64)


def cell_index(spec: LatticeSpec, cells) -> tuple[np.ndarray, np.ndarray]:
    cells = np.asarray(cells, dtype=np.int64)
    return cube_index(spec, cells // 6), cells % 6


def node_id(spec: LatticeSpec, ijk) -> np.ndarray:
    _, ny, nz = spec.shape
    ijk = np.asarray(ijk, dtype=np.int64)
    return (ijk[..., 0] * (ny + 1) + ijk[..., 1]) * (nz + 1) + ijk[..., 2]


def node_index(spec: LatticeSpec, nodes) -> np.ndarray:
    _, ny, nz = spec.shape
    nodes = np.asarray(nodes, dtype=np.int64)
    return np.stack([nodes // ((ny + 1) * (nz + 1)), (nodes // (nz + 1)) % (ny + 1),
                     nodes % (nz + 1)], axis=-1)


def node_position(spec: LatticeSpec, nodes) -> np.ndarray:
    return np.asarray(spec.origin) + spec.h * node_index(spec, nodes)


def in_bounds(spec: LatticeSpec, ijk) -> np.ndarray:
    ijk = np.asarray(ijk)
    return np.all((ijk >= 0) & (ijk < np.asarray(spec.shape)), axis=-1)


def _check_cells(spec: LatticeSpec, cells) -> np.ndarray:
    cells = np.asarray(cells, dtype=np.int64)
    if np.any(cells < 0) or np.any(cells >= spec.n_cells):
        raise IndexError("cell id outside the lattice")
    return cells


# --- cell geometry --------------------------------------------------------------

def cell_node_ijk(spec: LatticeSpec, cells) -> np.ndarray:
    ijk, t = cell_index(spec, _check_cells(spec, cells))
    return ijk[..., None, :] + KUHN_OFFSETS[t]


def cell_nodes(spec: LatticeSpec, cells) -> np.ndarray:
    """Node ids of the 4 vertices of each cell, shape (..., 4)."""
    return node_id(spec, cell_node_ijk(spec, cells))


def cell_vertices(spec: LatticeSpec, cells) -> np.ndarray:
    """Vertex positions of each cell, shape (..., 4, 3)."""
    if isinstance(cells, CellId):
        cells = cell_id(spec, cells[:3], cells.t)
    return np.asarray(spec.origin) + spec.h * cell_node_ijk(spec, cells)


def kuhn_gradients(spec: LatticeSpec, cells) -> np.ndarray:
    """Constant gradients of the 4 barycentric functions on each cell, shape (..., 4, 3)."""
    t = np.asarray(cells, dtype=np.int64) % 6
    s = PERMS[t]
    e = _EYE.astype(float)
    grads = np.empty(t.shape + (4, 3))
    grads[..., 0, :] = -e[s[..., 0]]
    grads[..., 1, :] = e[s[..., 0]] - e[s[..., 1]]
    grads[..., 2, :] = e[s[..., 1]] - e[s[..., 2]]
    grads[..., 3, :] = e[s[..., 2]]
    return grads / spec.h


@numba.njit(cache=True)
def _bary_kernel(origin, h, ny, nz, perms, cells, x):
    P = x.shape[0]
    out = np.empty((P, 4))
    y = np.empty(3)
    for p in range(P):
        c = cells[p]
        cube, t = c // 6, c % 6
        i, j, k = cube // (ny * nz), (cube // nz) % ny, cube % nz
        y[0] = (x[p, 0] - origin[0]) / h - i
        y[1] = (x[p, 1] - origin[1]) / h - j
        y[2] = (x[p, 2] - origin[2]) / h - k
        a, b, d = y[perms[t, 0]], y[perms[t, 1]], y[perms[t, 2]]
        out[p, 0] = 1.0 - a
        out[p, 1] = a - b
        out[p, 2] = b - d
        out[p, 3] = d
    return out


def barycentric(spec: LatticeSpec, cells, x) -> np.ndarray:
    """Barycentric coordinates of points ``x`` w.r.t. ``cells`` (closed form for Kuhn tets).

    ``cells`` has the leading shape of x or a prefix of it (broadcast over the rest).
    """
    x = np.asarray(x, dtype=float)
    cells = np.asarray(cells, dtype=np.int64)
    cells = cells.reshape(cells.shape + (1,) * (x.ndim - 1 - cells.ndim))
    lead = x.shape[:-1]
    flat = np.ascontiguousarray(np.broadcast_to(cells, lead)).reshape(-1)
    _, ny, nz = spec.shape
    out = _bary_kernel(np.asarray(spec.origin, dtype=float), float(spec.h), ny, nz, PERMS,
                       flat, np.ascontiguousarray(x.reshape(-1, 3)))
    return out.reshape(lead + (4,))


def locate_point(spec: LatticeSpec, x) -> np.ndarray:
    """Id of the cell containing each point.

    Points on shared faces, edges or vertices resolve to the lexicographically
    smallest containing cell, i.e. the smallest id.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 1
    x = np.atleast_2d(x)
    if not np.all(spec.contains(x)):
        bad = x[~spec.contains(x)][0]
        raise ValueError(f"point {bad} lies outside the lattice box")
    s = (x - np.asarray(spec.origin)) / spec.h
    ijk = np.ceil(s).astype(np.int64) - 1
    ijk = np.clip(ijk, 0, np.asarray(spec.shape) - 1)
    y = s - ijk
    # stable sort on -y picks the lexicographically smallest permutation among ties
    order = np.argsort(-y, axis=1, kind="stable")
    t = _PERM_LOOKUP[order @ np.array([9, 3, 1])]
    out = cell_id(spec, ijk, t)
    return out[0] if scalar else out


def cells_overlapping_ball(spec: LatticeSpec, center, radius: float) -> np.ndarray:
    """All cells of the cubes meeting the bounding box of the ball (a superset)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    c = (np.asarray(center, dtype=float) - np.asarray(spec.origin)) / spec.h
    lo = np.clip(np.floor(c - radius / spec.h).astype(np.int64), 0, np.asarray(spec.shape) - 1)
    hi = np.clip(np.floor(c + radius / spec.h).astype(np.int64), 0, np.asarray(spec.shape) - 1)
    grids = np.meshgrid(*[np.arange(a, b + 1) for a, b in zip(lo, hi)], indexing="ij")
    ijk = np.stack([g.ravel() for g in grids], axis=1)
    cubes = cube_id(spec, ijk)
    return (cubes[:, None] * 6 + np.arange(6)).ravel()


def face_neighbors(spec: LatticeSpec, cells) -> np.ndarray:
    """Face-adjacent cell ids, shape (..., 4); -1 where the face is on the box boundary.

    Entry v is the neighbour across the face opposite local vertex v.
    """
    ijk, t = cell_index(spec, cells)
    nijk = ijk[..., None, :] + _FACE_SHIFT[t]
    ok = in_bounds(spec, nijk)
    out = cell_id(spec, np.where(ok[..., None], nijk, 0), _FACE_TET[t])
    return np.where(ok, out, -1)


def cube_face_neighbors(spec: LatticeSpec, cubes) -> np.ndarray:
    """6 face-adjacent cube ids per cube, -1 outside the box."""
    ijk = cube_index(spec, cubes)
    nijk = ijk[..., None, :] + _FACE_DIRS
    ok = in_bounds(spec, nijk)
    return np.where(ok, cube_id(spec, np.where(ok[..., None], nijk, 0)), -1)


def cube_corner_positions(spec: LatticeSpec, cubes) -> np.ndarray:
    ijk = cube_index(spec, cubes)
    return np.asarray(spec.origin) + spec.h * (ijk[..., None, :] + CUBE_CORNERS)


def cube_corner_nodes(spec: LatticeSpec, cubes) -> np.ndarray:
    return node_id(spec, cube_index(spec, cubes)[..., None, :] + CUBE_CORNERS)
