"""Narrow band selection, discrete surface extraction and surface quadrature.

The discrete surface is the zero level of the P1 interpolant of phi on the h/2
Kuhn lattice. Each marching-tetrahedra polygon is clipped against the Kuhn
planes of the enclosing h-cube, so every surface triangle lies in exactly one
h-cell (its parent) and P1 functions of the h-lattice are smooth on it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from . import lattice as lat
from .lattice import LatticeSpec
from .levelset import DiscreteLevelSet, ScenarioField

ZERO_SHIFT = 1e-12
SLIVER_AREA = 1e-14

# symmetric triangle rules: (barycentric points, weights summing to 1)
_A4, _B4 = 0.445948490915965, 0.091576213509771
_W4A, _W4B = 0.223381589678011, 0.109951743655322
QUADRATURE_RULES = {
    2: (np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
        np.full(3, 1 / 3)),
    4: (np.array([[1 - 2 * _A4, _A4, _A4], [_A4, 1 - 2 * _A4, _A4], [_A4, _A4, 1 - 2 * _A4],
                  [1 - 2 * _B4, _B4, _B4], [_B4, 1 - 2 * _B4, _B4], [_B4, _B4, 1 - 2 * _B4]]),
        np.array([_W4A] * 3 + [_W4B] * 3)),
}


class InclusionError(RuntimeError):
    """The new discrete surface left the previous narrow band."""


class EmptyBandError(RuntimeError):
    pass


@dataclass
class CutSurface:
    triangles: np.ndarray   # (M, 3, 3)
    parents: np.ndarray     # (M,) h-lattice cell ids
    t: float
    fine_cubes: np.ndarray  # cut cubes of the h/2 lattice (search hint for the next step)
    degree: int = 0
    qpoints: np.ndarray | None = None   # (M, nq, 3)
    qweights: np.ndarray | None = None  # (M, nq)
    qnormals: np.ndarray | None = None  # (M, nq, 3)

    @property
    def areas(self) -> np.ndarray:
        e1 = self.triangles[:, 1] - self.triangles[:, 0]
        e2 = self.triangles[:, 2] - self.triangles[:, 0]
        return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=-1)

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    def integrate(self, values) -> float:
        """Quadrature of values given at the quadrature points, shape (M, nq)."""
        return float(np.sum(self.qweights * values))


@dataclass
class NarrowBand:
    lattice: LatticeSpec
    cells: np.ndarray       # sorted active cell ids
    nodes: np.ndarray       # sorted active node ids
    cell_dofs: np.ndarray   # (C, 4) dense indices into nodes
    delta: float
    t: float

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def has_cells(self, cells) -> np.ndarray:
        cells = np.asarray(cells, dtype=np.int64)
        pos = np.clip(np.searchsorted(self.cells, cells), 0, len(self.cells) - 1)
        return self.cells[pos] == cells

    def dofs(self, node_ids) -> np.ndarray:
        node_ids = np.asarray(node_ids, dtype=np.int64)
        pos = np.clip(np.searchsorted(self.nodes, node_ids), 0, len(self.nodes) - 1)
        if not np.all(self.nodes[pos] == node_ids):
            raise KeyError("node not active in this band")
        return pos

    def node_positions(self) -> np.ndarray:
        return lat.node_position(self.lattice, self.nodes)


def band_width(dt: float, velocity_bound: float, c_delta: float = 1.0) -> float:
    if c_delta < 1:
        raise ValueError("c_delta must be >= 1")
    return c_delta * dt * velocity_bound


def velocity_bound(field: ScenarioField, surface: CutSurface, dt: float,
                   inflation: float = 1.1) -> float:
    """Sup of the normal speed over [t, t + dt], sampled at the triangle centroids."""
    x = surface.triangles.mean(axis=1)
    return inflation * field.normal_speed_bound(x, surface.t, surface.t + dt)


# --- cut cube search on the fine lattice -------------------------------------

def _shifted(values: np.ndarray, scale: float) -> np.ndarray:
    return np.where(values == 0.0, ZERO_SHIFT * scale, values)


def _sign_change(values: np.ndarray) -> np.ndarray:
    return np.any(values < 0, axis=-1) & np.any(values > 0, axis=-1)


def _corner_values(dls: DiscreteLevelSet, fine: LatticeSpec, cubes: np.ndarray) -> np.ndarray:
    return _shifted(dls.field.phi(lat.cube_corner_positions(fine, cubes), dls.t), dls.scale)


def find_cut_cubes(dls: DiscreteLevelSet, hint: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Flood fill over face-adjacent h/2 cubes whose corners change sign.

    Seeds come from analytic surface points (plus their 26-neighbourhoods) and
    from ``hint``, e.g. the cut cubes of the previous time step.
    """
    fine = dls.fine
    seeds = dls.field.seeds(dls.t)
    seeds = seeds[fine.contains(seeds)]
    start = []
    if len(seeds):
        ijk = lat.cube_index(fine, lat.locate_point(fine, seeds) // 6)
        offs = np.array(np.meshgrid([-1, 0, 1], [-1, 0, 1], [-1, 0, 1], indexing="ij")).reshape(3, -1).T
        nb = (ijk[:, None, :] + offs).reshape(-1, 3)
        start.append(lat.cube_id(fine, nb[lat.in_bounds(fine, nb)]))
    if hint is not None and len(hint):
        hint = np.asarray(hint, dtype=np.int64)
        ijk = lat.cube_index(fine, hint)
        offs = np.concatenate([np.zeros((1, 3), np.int64), lat._FACE_DIRS])
        nb = (ijk[:, None, :] + offs).reshape(-1, 3)
        start.append(lat.cube_id(fine, nb[lat.in_bounds(fine, nb)]))
    if not start:
        raise EmptyBandError("no seed points inside the domain")
    candidates = np.unique(np.concatenate(start))
    visited = candidates
    vals = _corner_values(dls, fine, candidates)
    keep = _sign_change(vals)
    found, found_vals = [candidates[keep]], [vals[keep]]
    frontier = candidates[keep]
    while len(frontier):
        nb = lat.cube_face_neighbors(fine, frontier).ravel()
        nb = np.unique(nb[nb >= 0])
        nb = nb[~np.isin(nb, visited, assume_unique=True)]
        if not len(nb):
            break
        visited = np.union1d(visited, nb)
        vals = _corner_values(dls, fine, nb)
        keep = _sign_change(vals)
        frontier = nb[keep]
        found.append(frontier)
        found_vals.append(vals[keep])
    cubes = np.concatenate(found)
    vals = np.concatenate(found_vals)
    order = np.argsort(cubes, kind="stable")
    return cubes[order], vals[order]


# --- marching tetrahedra + Kuhn clipping kernels ------------------------------

@numba.njit(cache=True)
def _edge_point(v, f, i, j, out):
    # interpolate from the lower-index vertex so a sign flip reproduces the same bits
    if i > j:
        i, j = j, i
    s = f[i] / (f[i] - f[j])
    for d in range(3):
        out[d] = v[i, d] + s * (v[j, d] - v[i, d])


@numba.njit(cache=True)
def _dist2(a, b):
    return (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2


@numba.njit(cache=True)
def _cross_dot(p0, p1, p2, d):
    # ((p1 - p0) x (p2 - p0)) . d
    e1x, e1y, e1z = p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]
    e2x, e2y, e2z = p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]
    return (e1y * e2z - e1z * e2y) * d[0] + (e1z * e2x - e1x * e2z) * d[1] + (e1x * e2y - e1y * e2x) * d[2]


@numba.njit(cache=True)
def _tri_area(p0, p1, p2):
    e1x, e1y, e1z = p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]
    e2x, e2y, e2z = p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]
    nx, ny, nz = e1y * e2z - e1z * e2y, e1z * e2x - e1x * e2z, e1x * e2y - e1y * e2x
    return 0.5 * np.sqrt(nx * nx + ny * ny + nz * nz)


@numba.njit(cache=True)
def _march_one(v, f, out, ws):
    """Triangles of the zero level of a linear function on one tet; returns the count."""
    nn = 0
    for i in range(4):
        if f[i] < 0:
            nn += 1
    if nn == 0 or nn == 4:
        return 0
    np_ = 4 - nn
    neg = np.zeros(4, np.int64)
    pos = np.zeros(4, np.int64)
    a_ = 0
    b_ = 0
    for i in range(4):
        if f[i] < 0:
            neg[a_] = i
            a_ += 1
        else:
            pos[b_] = i
            b_ += 1
    ntri = 0
    if nn == 1 or nn == 3:
        if nn == 1:
            lone = neg[0]
            others = pos
        else:
            lone = pos[0]
            others = neg
        for e in range(3):
            _edge_point(v, f, lone, others[e], out[0, e])
        ntri = 1
    else:
        a, b, c, d = neg[0], neg[1], pos[0], pos[1]
        q = ws
        _edge_point(v, f, a, c, q[0])
        _edge_point(v, f, a, d, q[1])
        _edge_point(v, f, b, d, q[2])
        _edge_point(v, f, b, c, q[3])
        if _dist2(q[0], q[2]) <= _dist2(q[1], q[3]):
            out[0, 0], out[0, 1], out[0, 2] = q[0], q[1], q[2]
            out[1, 0], out[1, 1], out[1, 2] = q[0], q[2], q[3]
        else:
            out[0, 0], out[0, 1], out[0, 2] = q[0], q[1], q[3]
            out[1, 0], out[1, 1], out[1, 2] = q[1], q[2], q[3]
        ntri = 2
    # orient towards increasing phi
    dirv = ws[4]
    dirv[:] = 0.0
    for i in range(4):
        w = 1.0 / np_ if f[i] >= 0 else -1.0 / nn
        for k in range(3):
            dirv[k] += w * v[i, k]
    tmp = ws[5]
    for m in range(ntri):
        if _cross_dot(out[m, 0], out[m, 1], out[m, 2], dirv) < 0:
            tmp[:] = out[m, 1]
            out[m, 1] = out[m, 2]
            out[m, 2] = tmp
    return ntri


@numba.njit(cache=True)
def _clip(poly, npts, a, b, sign, out):
    """Part of polygon where sign*(y[a]-y[b]) >= 0 (Sutherland-Hodgman)."""
    m = 0
    for i in range(npts):
        p = poly[i]
        q = poly[(i + 1) % npts]
        fp = sign * (p[a] - p[b])
        fq = sign * (q[a] - q[b])
        if fp >= 0:
            out[m] = p
            m += 1
        if (fp > 0 and fq < 0) or (fp < 0 and fq > 0):
            s = fp / (fp - fq)
            out[m] = p + s * (q - p)
            m += 1
    return m


_PLANES = np.array([[0, 1], [1, 2], [0, 2]], dtype=np.int64)


@numba.njit(cache=True)
def _kuhn_of(y):
    # index into lexicographic permutations of argsort(-y), stable
    s0 = 0
    if y[1] > y[s0]:
        s0 = 1
    if y[2] > y[s0]:
        s0 = 2
    r0 = 1 if s0 == 0 else 0
    r1 = 2 if s0 != 2 else 1
    if y[r1] > y[r0]:
        s1, s2 = r1, r0
    else:
        s1, s2 = r0, r1
    # lexicographic rank of (s0, s1, s2)
    return s0 * 2 + (0 if s1 < s2 else 1)


@numba.njit(cache=True)
def _emit(p0, p1, p2, nref, cube_origin, h, tk, src, tri_out, t_out, src_out, count, min_area):
    if _tri_area(p0, p1, p2) < min_area:
        return count
    if count >= tri_out.shape[0]:
        return -1
    if _cross_dot(p0, p1, p2, nref) < 0:
        p1, p2 = p2, p1
    for d in range(3):
        tri_out[count, 0, d] = cube_origin[d] + h * p0[d]
        tri_out[count, 1, d] = cube_origin[d] + h * p1[d]
        tri_out[count, 2, d] = cube_origin[d] + h * p2[d]
    t_out[count] = tk
    src_out[count] = src
    return count + 1


@numba.njit(cache=True)
def _lex_less(p, q):
    for d in range(3):
        if p[d] != q[d]:
            return p[d] < q[d]
    return False


@numba.njit(cache=True)
def _clip_and_emit(tri, cube_origin, h, tri_out, t_out, src_out, src, count, min_area, ws_a, ws_b, buf):
    """Split a triangle (world coords) into pieces inside single Kuhn tets of one h-cube.

    Clipping starts from the vertices in lexicographic order, so the pieces do not
    depend on the orientation of ``tri``; each piece gets the orientation of ``tri``.
    """
    polys, new_polys = ws_a, ws_b
    sizes = np.zeros(8, np.int64)
    new_sizes = np.zeros(8, np.int64)
    nref = np.empty(3)
    e1, e2 = tri[1] - tri[0], tri[2] - tri[0]
    nref[0] = e1[1] * e2[2] - e1[2] * e2[1]
    nref[1] = e1[2] * e2[0] - e1[0] * e2[2]
    nref[2] = e1[0] * e2[1] - e1[1] * e2[0]
    order = np.arange(3)
    for i in range(1, 3):
        j = i
        while j > 0 and _lex_less(tri[order[j]], tri[order[j - 1]]):
            order[j], order[j - 1] = order[j - 1], order[j]
            j -= 1
    for k in range(3):
        for d in range(3):
            polys[0, k, d] = (tri[order[k], d] - cube_origin[d]) / h
    sizes[0] = 3
    npoly = 1
    for pl in range(3):
        a, b = _PLANES[pl, 0], _PLANES[pl, 1]
        nnew = 0
        for ip in range(npoly):
            # skip the split when the polygon is on one side
            lo = np.inf
            hi = -np.inf
            for k in range(sizes[ip]):
                val = polys[ip, k, a] - polys[ip, k, b]
                lo = min(lo, val)
                hi = max(hi, val)
            if lo >= 0 or hi <= 0:
                new_polys[nnew, :sizes[ip]] = polys[ip, :sizes[ip]]
                new_sizes[nnew] = sizes[ip]
                nnew += 1
                continue
            for sgn in (1.0, -1.0):
                m = _clip(polys[ip], sizes[ip], a, b, sgn, buf)
                if m >= 3:
                    new_polys[nnew, :m] = buf[:m]
                    new_sizes[nnew] = m
                    nnew += 1
        polys, new_polys = new_polys, polys
        sizes, new_sizes = new_sizes, sizes
        npoly = nnew
    cen = buf[0]
    for ip in range(npoly):
        m = sizes[ip]
        cen[:] = 0.0
        for k in range(m):
            cen += polys[ip, k]
        cen /= m
        tk = _kuhn_of(cen)
        for k in range(1, m - 1):
            count = _emit(polys[ip, 0], polys[ip, k], polys[ip, k + 1], nref, cube_origin, h, tk, src,
                          tri_out, t_out, src_out, count, min_area)
            if count < 0:
                return -1
    return count


@numba.njit(cache=True)
def _extract_kernel(verts, vals, cube_origins, h, capacity):
    n = verts.shape[0]
    tri_out = np.empty((capacity, 3, 3))
    t_out = np.empty(capacity, np.int64)
    src_out = np.empty(capacity, np.int64)
    count = 0
    tris = np.empty((2, 3, 3))
    ws = np.empty((6, 3))
    ws_a = np.empty((8, 10, 3))
    ws_b = np.empty((8, 10, 3))
    buf = np.empty((10, 3))
    min_area = SLIVER_AREA  # in units of h^2 (local coordinates)
    for i in range(n):
        ntri = _march_one(verts[i], vals[i], tris, ws)
        for m in range(ntri):
            count = _clip_and_emit(tris[m], cube_origins[i], h, tri_out, t_out, src_out, i,
                                   count, min_area, ws_a, ws_b, buf)
            if count < 0:
                return tri_out, t_out, src_out, -1
    return tri_out, t_out, src_out, count


def march_tet(verts, values) -> np.ndarray:
    """Marching-tetrahedra triangles for a single tet (no clipping), shape (k, 3, 3)."""
    out = np.empty((2, 3, 3))
    f = _shifted(np.asarray(values, dtype=float), 1.0)
    k = _march_one(np.asarray(verts, dtype=float), f, out, np.empty((6, 3)))
    return out[:k].copy()


def extract_surface(dls: DiscreteLevelSet, hint: np.ndarray | None = None,
                    degree: int = 4) -> CutSurface:
    """Triangulate the zero level of the h/2 interpolant, clipped to h-cells."""
    fine = dls.fine
    cubes, corner_vals = find_cut_cubes(dls, hint)
    if not len(cubes):
        raise EmptyBandError("no cut cells: the surface left the domain or phi is degenerate")
    n = len(cubes)
    tet_vals = corner_vals[:, lat.KUHN_CORNERS].reshape(-1, 4)
    tet_verts = (lat.cube_corner_positions(fine, cubes)[:, lat.KUHN_CORNERS]).reshape(-1, 4, 3)
    cube_ijk = lat.cube_index(fine, cubes)
    coarse_ijk = cube_ijk // 2
    origins = np.asarray(fine.origin) + dls.lattice.h * coarse_ijk
    origins = np.repeat(origins, 6, axis=0)
    capacity = max(64, 6 * len(tet_vals))
    while True:
        tris, tk, src, count = _extract_kernel(tet_verts, tet_vals, origins, dls.lattice.h, capacity)
        if count >= 0:
            break
        capacity *= 2
    tris, tk, src = tris[:count].copy(), tk[:count].copy(), src[:count].copy()
    parents = lat.cell_id(dls.lattice, np.repeat(coarse_ijk, 6, axis=0)[src], tk)
    surf = CutSurface(tris, parents, dls.t, cubes)
    return surface_quadrature(surf, degree, dls.field)


def surface_quadrature(surface: CutSurface, degree: int, field: ScenarioField | None = None) -> CutSurface:
    if degree not in QUADRATURE_RULES:
        raise ValueError(f"unsupported quadrature degree {degree}; use 2 or 4")
    bary, w = QUADRATURE_RULES[degree]
    surface.degree = degree
    surface.qpoints = np.matmul(bary, surface.triangles)
    surface.qweights = surface.areas[:, None] * w[None, :]
    if field is not None:
        surface.qnormals = field.normal(surface.qpoints, surface.t)
    return surface


# --- narrow band ---------------------------------------------------------------

_EDGES = np.array([(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])


def _normalized_phi(dls: DiscreteLevelSet, pts: np.ndarray) -> np.ndarray:
    """phi/|grad phi|: a first-order signed distance estimate (+-inf where undefined)."""
    phi = dls.field.phi(pts, dls.t)
    try:
        g = np.linalg.norm(dls.field.grad_phi(pts, dls.t), axis=-1)
    except ValueError:
        g = np.ones_like(phi)
        for idx in np.ndindex(phi.shape):
            try:
                g[idx] = np.linalg.norm(dls.field.grad_phi(pts[idx], dls.t))
            except ValueError:
                g[idx] = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        d = phi / g
    return np.where(np.isnan(d), np.inf, d)


def _near_surface(dls: DiscreteLevelSet, cells: np.ndarray, delta: float) -> np.ndarray:
    """Conservative test for dist(T, Gamma_h) <= delta.

    The distance estimate psi is sampled at the vertices and edge midpoints
    (all nodes of the h/2 lattice). For quadratic psi the deviation from the
    vertex interpolant is at most 1.5 max|second difference|; the same bound
    at h/2 covers the offset between Gamma and the discrete surfaces.
    """
    spec = dls.lattice
    verts = lat.cell_vertices(spec, cells)                       # (C, 4, 3)
    mids = 0.5 * (verts[:, _EDGES[:, 0]] + verts[:, _EDGES[:, 1]])
    psi_v = _normalized_phi(dls, verts)
    psi_m = _normalized_phi(dls, mids)
    with np.errstate(invalid="ignore"):
        second = 0.5 * (psi_v[:, _EDGES[:, 0]] + psi_v[:, _EDGES[:, 1]]) - psi_m
    slack = 2.25 * np.max(np.where(np.isfinite(second), np.abs(second), 0.0), axis=1)
    lo = psi_v.min(axis=1) - slack
    hi = psi_v.max(axis=1) + slack
    return (lo <= delta) & (hi >= -delta)


def select_band(dls: DiscreteLevelSet, surface: CutSurface, delta: float) -> NarrowBand:
    """Active cells: parents of surface triangles, cells whose h-vertex values change
    sign, and cells within (estimated) distance ``delta`` of the surface."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    spec = dls.lattice
    start = np.unique(surface.parents)
    if not len(start):
        raise EmptyBandError("no cut cells")
    visited = start
    found = [start]
    frontier = start
    while len(frontier):
        nb = lat.face_neighbors(spec, frontier).ravel()
        nb = np.unique(nb[nb >= 0])
        nb = nb[~np.isin(nb, visited, assume_unique=True)]
        if not len(nb):
            break
        visited = np.union1d(visited, nb)
        nodes = lat.cell_nodes(spec, nb)
        uniq, inv = np.unique(nodes, return_inverse=True)
        phi = _shifted(dls.field.phi(lat.node_position(spec, uniq), dls.t), dls.scale)
        keep = _sign_change(phi[inv].reshape(nodes.shape))
        if delta > 0:
            keep |= _near_surface(dls, nb, delta)
        frontier = nb[keep]
        found.append(frontier)
    cells = np.sort(np.concatenate(found))
    cnodes = lat.cell_nodes(spec, cells)
    nodes, inv = np.unique(cnodes, return_inverse=True)
    return NarrowBand(spec, cells, nodes, inv.reshape(cnodes.shape), float(delta), dls.t)


_FACE_HEIGHT = np.array([1.0, 2 ** -0.5, 2 ** -0.5, 1.0])


def check_inclusion(band: NarrowBand, surface: CutSurface):
    """Is every quadrature point of ``surface`` inside an active cell of ``band``?

    Returns (ok, worst point, margin). The margin is the smallest distance from a
    quadrature point to a face of its cell that borders an inactive cell, capped
    at h; it is -1 on failure.
    """
    inside = band.has_cells(surface.parents)
    if not np.all(inside):
        bad = np.flatnonzero(~inside)[0]
        return False, surface.qpoints[bad, 0].copy(), -1.0
    spec = band.lattice
    uniq, inv = np.unique(surface.parents, return_inverse=True)
    nb = lat.face_neighbors(spec, uniq)
    exposed = ~((nb >= 0) & band.has_cells(np.where(nb >= 0, nb, 0)))
    lam = lat.barycentric(spec, surface.parents, surface.qpoints)  # (M, nq, 4)
    dist = lam * (spec.h * _FACE_HEIGHT)
    dist = np.where(exposed[inv][:, None, :], dist, spec.h)
    per_point = np.minimum(dist.min(axis=-1), spec.h)
    worst = np.unravel_index(np.argmin(per_point), per_point.shape)
    return True, surface.qpoints[worst].copy(), float(per_point[worst])
