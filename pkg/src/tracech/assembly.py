"""Assembly of the coupled [c; mu] linear system on the narrow band.

Surface terms are integrated on the cut triangles, the normal-derivative
stabilization on every active cell with a one-point rule.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from . import lattice as lat
from .cutgeom import CutSurface, InclusionError, NarrowBand
from .levelset import ScenarioField
from .solver import SparseMatrix


@dataclass
class ModelParams:
    epsilon: float
    dt: float
    sigma: float = 1.0
    beta_s: float | None = None   # default 1/epsilon
    rho: float = 1.0
    rho_c: float | None = None    # default 1/h
    rho_mu: float | None = None   # default 1/h
    quad_degree: int = 4

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.beta_s is None:
            self.beta_s = 1.0 / self.epsilon

    def stabilization(self, h: float) -> tuple[float, float]:
        rc = 1.0 / h if self.rho_c is None else self.rho_c
        rm = 1.0 / h if self.rho_mu is None else self.rho_mu
        return rc, rm


@dataclass
class SystemState:
    c: np.ndarray
    mu: np.ndarray
    band: NarrowBand
    t: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.c)):
            raise FloatingPointError("non-finite order parameter")


@dataclass
class FESystem:
    matrix: SparseMatrix
    rhs: np.ndarray
    band: NarrowBand

    @property
    def n_nodes(self) -> int:
        return self.band.n_nodes


# --- pointwise pieces -----------------------------------------------------------------

def p1_shape(vertices, x):
    """Barycentric values (..., 4) and constant gradients (..., 4, 3) on a tetrahedron."""
    v = np.asarray(vertices, dtype=float)
    x = np.asarray(x, dtype=float)
    T = np.swapaxes(v[..., 1:, :] - v[..., :1, :], -1, -2)
    det = np.linalg.det(T)
    scale = np.max(np.abs(T), axis=(-1, -2)) ** 3
    if np.any(np.abs(det) <= 1e-14 * scale):
        raise ValueError("degenerate tetrahedron")
    Tinv = np.linalg.inv(T)
    lam = np.einsum("...ij,...j->...i", Tinv, x - v[..., 0, :])
    vals = np.concatenate([1.0 - lam.sum(-1, keepdims=True), lam], axis=-1)
    grads = np.concatenate([-Tinv.sum(-2, keepdims=True), Tinv], axis=-2)
    return vals, grads


def tangential_gradient(grad, n):
    grad = np.asarray(grad, dtype=float)
    n = np.asarray(n, dtype=float)
    return grad - np.sum(grad * n, axis=-1, keepdims=True) * n


def potential(c):
    c = np.asarray(c, dtype=float)
    f0 = 0.25 * c**2 * (1 - c) ** 2
    d1 = 0.5 * c * (1 - c) * (1 - 2 * c)
    d2 = 0.5 * (1 - 6 * c + 6 * c**2)
    return f0, d1, d2


def mobility(c, sigma: float = 1.0):
    cc = np.clip(np.asarray(c, dtype=float), 0.0, 1.0)
    return sigma * cc * (1 - cc)


# --- evaluation of band functions --------------------------------------------------------

def band_positions(band: NarrowBand, cells) -> np.ndarray:
    cells = np.asarray(cells, dtype=np.int64)
    inside = band.has_cells(cells)
    if not np.all(inside):
        bad = cells[~inside].ravel()[0]
        raise InclusionError(f"cell {bad} is not active in the band at t={band.t}")
    return np.searchsorted(band.cells, cells)


@numba.njit(cache=True)
def _p1_eval(origin, h, ny, nz, perms, cells, dofs, values, x):
    # x: (M, nq, 3) with one cell per row; Kuhn gradient in closed form:
    # grad[s0] = (v1 - v0)/h, grad[s1] = (v2 - v1)/h, grad[s2] = (v3 - v2)/h
    M, nq = x.shape[0], x.shape[1]
    val = np.empty((M, nq))
    grad = np.empty((M, 3))
    y = np.empty(3)
    for m in range(M):
        c = cells[m]
        cube, t = c // 6, c % 6
        ijk0, ijk1, ijk2 = cube // (ny * nz), (cube // nz) % ny, cube % nz
        s0, s1, s2 = perms[t, 0], perms[t, 1], perms[t, 2]
        v0, v1, v2, v3 = values[dofs[m, 0]], values[dofs[m, 1]], values[dofs[m, 2]], values[dofs[m, 3]]
        grad[m, s0] = (v1 - v0) / h
        grad[m, s1] = (v2 - v1) / h
        grad[m, s2] = (v3 - v2) / h
        for q in range(nq):
            y[0] = (x[m, q, 0] - origin[0]) / h - ijk0
            y[1] = (x[m, q, 1] - origin[1]) / h - ijk1
            y[2] = (x[m, q, 2] - origin[2]) / h - ijk2
            a, b, d = y[s0], y[s1], y[s2]
            val[m, q] = v0 * (1.0 - a) + v1 * (a - b) + v2 * (b - d) + v3 * d
    return val, grad


def evaluate_prev(values: np.ndarray, band: NarrowBand, x, cells=None):
    """P1 value and (cell-constant) gradient of a nodal band vector at points x.

    ``cells`` gives the containing cell per point (leading shape of x, or one per
    row of x for x of shape (M, nq, 3)); located automatically if omitted.
    """
    x = np.asarray(x, dtype=float)
    spec = band.lattice
    if cells is None:
        cells = lat.locate_point(spec, x)
    cells = np.asarray(cells, dtype=np.int64)
    pos = band_positions(band, cells)
    if cells.ndim == x.ndim - 2:          # one cell per row of points
        lead = cells.shape
        xr = x.reshape((-1,) + x.shape[-2:])
    else:
        lead = x.shape[:-1]
        xr = x.reshape(-1, 1, 3)
    flat = cells.reshape(-1)
    _, ny, nz = spec.shape
    val, grad = _p1_eval(np.asarray(spec.origin, dtype=float), float(spec.h), ny, nz, lat.PERMS, flat,
                         band.cell_dofs[pos.reshape(-1)], np.ascontiguousarray(values, dtype=float),
                         np.ascontiguousarray(xr))
    if cells.ndim == x.ndim - 2:
        val = val.reshape(x.shape[:-1])
        grad = np.broadcast_to(grad.reshape(lead + (1, 3)), x.shape)
    else:
        val = val.reshape(lead)
        grad = grad.reshape(lead + (3,))
    return val, grad


# --- assembly ------------------------------------------------------------------------------

@numba.njit(cache=True)
def _cell_kernel(origin, h, ny, nz, perms, parents, tpos, n_cells, x, w, nrm, rho, mob, u, c_prev, d1, g,
                 dt, eps, beta):
    """Surface contributions per band cell: local (C, 2, 2, 4, 4) blocks and loads (C, 2, 4)."""
    M, nq = w.shape
    local = np.zeros((n_cells, 2, 2, 4, 4))
    loads = np.zeros((n_cells, 2, 4))
    G = np.zeros((4, 3))
    gt = np.empty((4, 3))
    lam = np.empty(4)
    ug = np.empty(4)
    y = np.empty(3)
    for m in range(M):
        c = parents[m]
        k = tpos[m]
        cube, t = c // 6, c % 6
        i0, i1, i2 = cube // (ny * nz), (cube // nz) % ny, cube % nz
        s0, s1, s2 = perms[t, 0], perms[t, 1], perms[t, 2]
        G[:, :] = 0.0
        G[0, s0] = -1.0 / h
        G[1, s0] = 1.0 / h
        G[1, s1] = -1.0 / h
        G[2, s1] = 1.0 / h
        G[2, s2] = -1.0 / h
        G[3, s2] = 1.0 / h
        for q in range(nq):
            y[0] = (x[m, q, 0] - origin[0]) / h - i0
            y[1] = (x[m, q, 1] - origin[1]) / h - i1
            y[2] = (x[m, q, 2] - origin[2]) / h - i2
            a, b, d = y[s0], y[s1], y[s2]
            lam[0], lam[1], lam[2], lam[3] = 1.0 - a, a - b, b - d, d
            for i in range(4):
                dn = G[i, 0] * nrm[m, q, 0] + G[i, 1] * nrm[m, q, 1] + G[i, 2] * nrm[m, q, 2]
                for e in range(3):
                    gt[i, e] = G[i, e] - dn * nrm[m, q, e]
                ug[i] = u[m, q, 0] * G[i, 0] + u[m, q, 1] * G[i, 1] + u[m, q, 2] * G[i, 2]
            wq = w[m, q]
            wr = wq * rho[m, q]
            wm = wq * mob[m, q]
            lc = wr * (c_prev[m, q] / dt + g[m, q])
            lm = wq * (d1[m, q] / eps - beta * c_prev[m, q])
            for i in range(4):
                li = lam[i]
                loads[k, 0, i] += lc * li
                loads[k, 1, i] += lm * li
                for j in range(4):
                    mass = wq * li * lam[j]
                    dot = gt[i, 0] * gt[j, 0] + gt[i, 1] * gt[j, 1] + gt[i, 2] * gt[j, 2]
                    local[k, 0, 0, i, j] += rho[m, q] * mass / dt + wr * li * ug[j]
                    local[k, 0, 1, i, j] += wm * dot
                    local[k, 1, 0, i, j] += -beta * mass - eps * wq * dot
                    local[k, 1, 1, i, j] += mass
    return local, loads


def cell_matrices(band: NarrowBand, surface: CutSurface, params: ModelParams, field: ScenarioField,
                  velocity, c_prev, forcing=None):
    """Local 8x8 systems [[A_cc, A_cmu], [A_muc, A_mumu]] (as (C, 2, 2, 4, 4)) and loads (C, 2, 4)
    for every band cell, in band cell order. Inputs are given at surface quadrature points."""
    spec = band.lattice
    w = surface.qweights
    shape = w.shape
    tpos = band_positions(band, surface.parents)
    rho = params.rho * np.ones(shape)
    _, d1, _ = potential(c_prev)
    g = np.zeros(shape) if forcing is None else np.broadcast_to(np.asarray(forcing, float), shape)
    _, ny, nz = spec.shape
    local, loads = _cell_kernel(
        np.asarray(spec.origin, dtype=float), float(spec.h), ny, nz, lat.PERMS, surface.parents, tpos,
        len(band.cells), np.ascontiguousarray(surface.qpoints), np.ascontiguousarray(w),
        np.ascontiguousarray(surface.qnormals), rho, np.ascontiguousarray(mobility(c_prev, params.sigma)),
        np.ascontiguousarray(np.broadcast_to(np.asarray(velocity, float), shape + (3,))),
        np.ascontiguousarray(c_prev, dtype=float), np.ascontiguousarray(d1), np.ascontiguousarray(g),
        float(params.dt), float(params.epsilon), float(params.beta_s))
    rho_c, rho_mu = params.stabilization(spec.h)
    S = normal_stabilization(band, field, surface.t)
    local[:, 0, 1] += rho_mu * S
    local[:, 1, 0] -= rho_c * S
    return local, loads


@numba.njit(cache=True)
def _band_csr(cell_dofs, n_nodes, local, loads):
    """Scatter per-cell 8x8 blocks into the 2N x 2N CSR on the node adjacency pattern."""
    C = cell_dofs.shape[0]
    N = n_nodes
    cnt = np.zeros(N + 1, np.int64)
    for c in range(C):
        for a in range(4):
            cnt[cell_dofs[c, a] + 1] += 1
    inc_ptr = np.cumsum(cnt)
    fill = inc_ptr[:-1].copy()
    inc = np.empty(4 * C, np.int64)
    for c in range(C):
        for a in range(4):
            n = cell_dofs[c, a]
            inc[fill[n]] = 4 * c + a
            fill[n] += 1
    # row lengths
    mark = np.full(N, -1, np.int64)
    deg = np.zeros(N, np.int64)
    for i in range(N):
        for q in range(inc_ptr[i], inc_ptr[i + 1]):
            c = inc[q] // 4
            for b in range(4):
                j = cell_dofs[c, b]
                if mark[j] != i:
                    mark[j] = i
                    deg[i] += 1
    indptr = np.zeros(2 * N + 1, np.int64)
    for i in range(N):
        indptr[i + 1] = indptr[i] + 2 * deg[i]
    for i in range(N):
        indptr[N + i + 1] = indptr[N + i] + 2 * deg[i]
    indices = np.empty(indptr[2 * N], np.int64)
    data = np.zeros(indptr[2 * N])
    rhs = np.zeros(2 * N)
    slot = np.full(N, -1, np.int64)
    cols = np.empty(N, np.int64)
    for i in range(N):
        L = 0
        for q in range(inc_ptr[i], inc_ptr[i + 1]):
            c = inc[q] // 4
            for b in range(4):
                j = cell_dofs[c, b]
                if slot[j] < 0:
                    slot[j] = 0
                    cols[L] = j
                    L += 1
        row = np.sort(cols[:L])
        for p in range(L):
            slot[row[p]] = p
        rc, rm = indptr[i], indptr[N + i]
        for p in range(L):
            indices[rc + p] = row[p]
            indices[rc + L + p] = N + row[p]
            indices[rm + p] = row[p]
            indices[rm + L + p] = N + row[p]
        for q in range(inc_ptr[i], inc_ptr[i + 1]):
            c, a = inc[q] // 4, inc[q] % 4
            rhs[i] += loads[c, 0, a]
            rhs[N + i] += loads[c, 1, a]
            for b in range(4):
                p = slot[cell_dofs[c, b]]
                data[rc + p] += local[c, 0, 0, a, b]
                data[rc + L + p] += local[c, 0, 1, a, b]
                data[rm + p] += local[c, 1, 0, a, b]
                data[rm + L + p] += local[c, 1, 1, a, b]
        for p in range(L):
            slot[row[p]] = -1
    return indptr, indices, data, rhs


def normal_stabilization(band: NarrowBand, field: ScenarioField, t: float) -> np.ndarray:
    """One-point rule for int_T (n.grad phi_j)(n.grad phi_i) on every active cell."""
    spec = band.lattice
    bary = lat.cell_vertices(spec, band.cells).mean(axis=1)
    n = field.normal(bary, t)
    G = lat.kuhn_gradients(spec, band.cells)
    dn = np.einsum("ckd,cd->ck", G, n)
    vol = spec.h**3 / 6.0
    return vol * dn[:, :, None] * dn[:, None, :]


def _check_finite(cells, mats):
    for name, m in mats.items():
        bad = ~np.all(np.isfinite(m.reshape(len(m), -1)), axis=1)
        if np.any(bad):
            raise FloatingPointError(f"non-finite {name} contribution in cell {cells[bad][0]}")


def assemble(band: NarrowBand, surface: CutSurface, params: ModelParams, field: ScenarioField,
             velocity, c_prev, forcing=None) -> FESystem:
    """Linear system for one time step.

    ``velocity``, ``c_prev`` and ``forcing`` are given at the surface quadrature
    points, shapes (M, nq, 3), (M, nq) and (M, nq).
    """
    local, loads = cell_matrices(band, surface, params, field, velocity, c_prev, forcing)
    _check_finite(band.cells, {"cell": local})
    N = band.n_nodes
    indptr, indices, data, rhs = _band_csr(band.cell_dofs, N, local, loads)
    if not np.all(np.isfinite(rhs)):
        raise FloatingPointError("non-finite right-hand side")
    return FESystem(SparseMatrix(indptr, indices, data, 2 * N), rhs, band)
