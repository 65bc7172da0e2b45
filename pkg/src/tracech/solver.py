"""Compressed-row matrices and restarted GMRES with ILU(0) or Jacobi preconditioning."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numba
import numpy as np

log = logging.getLogger(__name__)

DENSE_LIMIT = 2000
REORTH = 0.7     # second pass if the norm drops below this fraction


@dataclass
class SparseMatrix:
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    n_cols: int

    @property
    def n_rows(self) -> int:
        return len(self.indptr) - 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    @property
    def nnz(self) -> int:
        return len(self.data)

    @classmethod
    def from_coo(cls, rows, cols, vals, shape) -> "SparseMatrix":
        """Sum duplicates in input order (stable sort) so assembly is deterministic."""
        n_rows, n_cols = shape
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=float).ravel()
        if len(rows) and (rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols):
            raise IndexError("COO index out of range")
        indptr, cols, vals = _coo_to_csr(rows, cols, vals, n_rows)
        return cls(indptr, cols, vals, n_cols)

    @classmethod
    def from_dense(cls, a) -> "SparseMatrix":
        a = np.asarray(a, dtype=float)
        r, c = np.nonzero(a)
        return cls.from_coo(r, c, a[r, c], a.shape)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        i = np.arange(n)
        return cls.from_coo(i, i, np.ones(n), (n, n))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.indptr))
        out[rows, self.indices] = self.data
        return out

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n_cols,):
            raise ValueError(f"dimension mismatch: {x.shape} vs {self.shape}")
        return _csr_matvec(self.indptr, self.indices, self.data, x)

    __matmul__ = matvec

    def transpose(self) -> "SparseMatrix":
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.indptr))
        return SparseMatrix.from_coo(self.indices, rows, self.data, (self.n_cols, self.n_rows))

    def diagonal(self) -> np.ndarray:
        out = np.zeros(min(self.shape))
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.indptr))
        on = rows == self.indices
        out[rows[on]] = self.data[on]
        return out


@numba.njit(cache=True)
def _coo_to_csr(rows, cols, vals, n_rows):
    # stable bucket sort by row; duplicates are summed left to right in input order
    counts = np.zeros(n_rows + 1, np.int64)
    for r in rows:
        counts[r + 1] += 1
    start = np.cumsum(counts)
    fill = start[:-1].copy()
    order = np.empty(len(rows), np.int64)
    for k in range(len(rows)):
        order[fill[rows[k]]] = k
        fill[rows[k]] += 1
    indptr = np.zeros(n_rows + 1, np.int64)
    out_c = np.empty(len(rows), np.int64)
    out_v = np.empty(len(rows))
    slot = np.full(max(1, cols.max() + 1) if len(cols) else 1, -1, np.int64)
    m = 0
    for r in range(n_rows):
        base = m
        for q in range(start[r], start[r + 1]):
            k = order[q]
            c = cols[k]
            if slot[c] < 0:
                slot[c] = m
                out_c[m] = c
                out_v[m] = vals[k]
                m += 1
            else:
                out_v[slot[c]] += vals[k]
        sub = np.argsort(out_c[base:m])
        cs = out_c[base:m][sub]
        vs = out_v[base:m][sub]
        out_c[base:m] = cs
        out_v[base:m] = vs
        for q in range(base, m):
            slot[out_c[q]] = -1
        indptr[r + 1] = m
    return indptr, out_c[:m].copy(), out_v[:m].copy()


@numba.njit(cache=True, parallel=True)
def _csr_matvec(indptr, indices, data, x):
    n = len(indptr) - 1
    y = np.empty(n)
    for i in numba.prange(n):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        y[i] = acc
    return y


# --- preconditioners -------------------------------------------------------------

@numba.njit(cache=True)
def _ilu0_factor(indptr, indices, data):
    n = len(indptr) - 1
    lu = data.copy()
    diag = np.full(n, -1, np.int64)
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            if indices[k] == i:
                diag[i] = k
    pos = np.full(n, -1, np.int64)
    for i in range(n):
        if diag[i] < 0:
            return lu, diag, i
        for k in range(indptr[i], indptr[i + 1]):
            pos[indices[k]] = k
        for kk in range(indptr[i], diag[i]):
            k = indices[kk]
            lu[kk] /= lu[diag[k]]
            mult = lu[kk]
            for jj in range(diag[k] + 1, indptr[k + 1]):
                p = pos[indices[jj]]
                if p >= 0:
                    lu[p] -= mult * lu[jj]
        for k in range(indptr[i], indptr[i + 1]):
            pos[indices[k]] = -1
        if lu[diag[i]] == 0.0 or not np.isfinite(lu[diag[i]]):
            return lu, diag, i
    return lu, diag, -1


@numba.njit(cache=True)
def _ilu0_solve(indptr, indices, lu, diag, b):
    n = len(b)
    y = b.copy()
    for i in range(n):
        acc = y[i]
        for k in range(indptr[i], diag[i]):
            acc -= lu[k] * y[indices[k]]
        y[i] = acc
    for i in range(n - 1, -1, -1):
        acc = y[i]
        for k in range(diag[i] + 1, indptr[i + 1]):
            acc -= lu[k] * y[indices[k]]
        y[i] = acc / lu[diag[i]]
    return y


def _node_blocks(a: SparseMatrix, fields: int):
    """Field-major CSR (fields stacked vectors of n nodes) to node-block CSR with dense
    (fields x fields) blocks on the union pattern."""
    return _node_blocks_kernel(a.indptr, a.indices, a.data, a.n_rows // fields, fields)


@numba.njit(cache=True)
def _node_blocks_kernel(indptr, indices, data, n, fields):
    bptr = np.zeros(n + 1, np.int64)
    mark = np.full(n, -1, np.int64)
    for i in range(n):
        cnt = 0
        for f in range(fields):
            r = f * n + i
            for k in range(indptr[r], indptr[r + 1]):
                j = indices[k] % n
                if mark[j] != i:
                    mark[j] = i
                    cnt += 1
        bptr[i + 1] = bptr[i] + cnt
    bidx = np.empty(bptr[n], np.int64)
    blocks = np.zeros((bptr[n], fields, fields))
    slot = np.full(n, -1, np.int64)
    for i in range(n):
        p = bptr[i]
        for f in range(fields):
            r = f * n + i
            for k in range(indptr[r], indptr[r + 1]):
                j = indices[k] % n
                if slot[j] < 0:
                    bidx[p] = j
                    slot[j] = p
                    p += 1
        seg = np.sort(bidx[bptr[i]:bptr[i + 1]])
        for q in range(len(seg)):
            bidx[bptr[i] + q] = seg[q]
            slot[seg[q]] = bptr[i] + q
        for f in range(fields):
            r = f * n + i
            for k in range(indptr[r], indptr[r + 1]):
                c = indices[k]
                blocks[slot[c % n], f, c // n] += data[k]
        for q in range(bptr[i], bptr[i + 1]):
            slot[bidx[q]] = -1
    return bptr, bidx, blocks


@numba.njit(cache=True)
def _block_jacobi(bptr, bidx, blocks):
    n = len(bptr) - 1
    dinv = np.zeros((n, 2, 2))
    for i in range(n):
        found = False
        for q in range(bptr[i], bptr[i + 1]):
            if bidx[q] == i:
                found = _inv2(blocks[q], dinv[i])
        if not found:
            return dinv, i
    return dinv, -1


@numba.njit(cache=True)
def _inv2(m, out):
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    scale = abs(m[0, 0] * m[1, 1]) + abs(m[0, 1] * m[1, 0])
    if not np.isfinite(det) or abs(det) <= 1e-300 or abs(det) <= 1e-15 * scale:
        return False
    out[0, 0] = m[1, 1] / det
    out[0, 1] = -m[0, 1] / det
    out[1, 0] = -m[1, 0] / det
    out[1, 1] = m[0, 0] / det
    return True


@numba.njit(cache=True)
def _bilu0_factor(indptr, indices, blocks):
    """Zero-fill block ILU for 2x2 blocks; returns (lu, diag positions, inverse pivots, bad row)."""
    n = len(indptr) - 1
    lu = blocks.copy()
    dinv = np.zeros((n, 2, 2))
    diag = np.full(n, -1, np.int64)
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            if indices[k] == i:
                diag[i] = k
    pos = np.full(n, -1, np.int64)
    tmp = np.empty((2, 2))
    for i in range(n):
        if diag[i] < 0:
            return lu, diag, dinv, i
        for k in range(indptr[i], indptr[i + 1]):
            pos[indices[k]] = k
        for kk in range(indptr[i], diag[i]):
            k = indices[kk]
            tmp[:, :] = lu[kk] @ dinv[k]
            lu[kk] = tmp
            for jj in range(diag[k] + 1, indptr[k + 1]):
                p = pos[indices[jj]]
                if p >= 0:
                    lu[p] -= tmp @ lu[jj]
        for k in range(indptr[i], indptr[i + 1]):
            pos[indices[k]] = -1
        if not _inv2(lu[diag[i]], dinv[i]):
            return lu, diag, dinv, i
    return lu, diag, dinv, -1


@numba.njit(cache=True)
def _bilu0_solve(indptr, indices, lu, diag, dinv, b):
    n = b.shape[0]
    y = b.copy()
    for i in range(n):
        a0, a1 = y[i, 0], y[i, 1]
        for k in range(indptr[i], diag[i]):
            j = indices[k]
            a0 -= lu[k, 0, 0] * y[j, 0] + lu[k, 0, 1] * y[j, 1]
            a1 -= lu[k, 1, 0] * y[j, 0] + lu[k, 1, 1] * y[j, 1]
        y[i, 0], y[i, 1] = a0, a1
    for i in range(n - 1, -1, -1):
        a0, a1 = y[i, 0], y[i, 1]
        for k in range(diag[i] + 1, indptr[i + 1]):
            j = indices[k]
            a0 -= lu[k, 0, 0] * y[j, 0] + lu[k, 0, 1] * y[j, 1]
            a1 -= lu[k, 1, 0] * y[j, 0] + lu[k, 1, 1] * y[j, 1]
        d = dinv[i]
        y[i, 0] = d[0, 0] * a0 + d[0, 1] * a1
        y[i, 1] = d[1, 0] * a0 + d[1, 1] * a1
    return y


# an unstable incomplete factorization amplifies far more than Jacobi does
ILU_GUARD = 100.0


class Preconditioner:
    """Right preconditioner: ``apply`` approximates A^{-1}.

    ILU(0) is checked against Jacobi on a fixed probe vector; if the factors
    amplify it more than ``guard`` times as much, the factorization is treated
    as unstable and Jacobi is used instead (``kind`` then reads "jacobi").

    With ``fields=2`` the unknowns are read as two stacked node vectors ([c; mu])
    and both Jacobi and ILU(0) act on the 2x2 node blocks; the zero-fill
    pattern is then the node adjacency of the assembled block matrix.
    """

    def __init__(self, a: SparseMatrix, kind: str = "ilu0", fields: int = 1,
                 guard: float | None = ILU_GUARD):
        if kind not in ("none", "jacobi", "ilu0"):
            raise ValueError(f"unknown preconditioner {kind!r}")
        if fields not in (1, 2) or a.n_rows % fields:
            raise ValueError("fields must be 1 or 2 and divide the system size")
        self.kind, self.fields, self.requested = kind, fields, kind
        if kind == "none":
            return
        if kind == "ilu0" and guard is not None:
            try:
                self._build(a, "jacobi")
            except ZeroDivisionError:
                self._build(a, "ilu0")     # nothing to compare with or fall back to
                return
            probe = np.random.default_rng(12345).standard_normal(a.n_rows)
            ref = np.linalg.norm(self.apply(probe))
            try:
                self._build(a, "ilu0")
                self.growth = np.linalg.norm(self.apply(probe)) / ref
            except ZeroDivisionError:
                self.growth = np.inf
            if not self.growth <= guard:
                log.info("ILU(0) factors amplify %.3g x more than Jacobi; using Jacobi", self.growth)
                self.kind = "jacobi"
            return
        self._build(a, kind)

    def _build(self, a: SparseMatrix, kind: str):
        fields = self.fields
        self.kind = kind
        if fields == 1:
            if kind == "jacobi":
                d = a.diagonal()
                if np.any(d == 0):
                    raise ZeroDivisionError("zero diagonal entry; Jacobi undefined")
                self.inv_diag = 1.0 / d
            else:
                lu, diag, bad = _ilu0_factor(a.indptr, a.indices, a.data)
                if bad >= 0:
                    raise ZeroDivisionError(f"ILU(0) zero or missing pivot in row {bad}")
                self.a, self.lu, self.diag = a, lu, diag
            return
        bptr, bidx, blocks = _node_blocks(a, fields)
        if kind == "jacobi":
            self.dinv, bad = _block_jacobi(bptr, bidx, blocks)
            if bad >= 0:
                raise ZeroDivisionError(f"singular diagonal block at node {bad}; Jacobi undefined")
        else:
            lu, diag, dinv, bad = _bilu0_factor(bptr, bidx, blocks)
            if bad >= 0:
                raise ZeroDivisionError(f"block ILU(0) singular or missing pivot at node {bad}")
            self.bptr, self.bidx, self.lu, self.diag, self.piv_inv = bptr, bidx, lu, diag, dinv

    def apply(self, r: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return r.copy()
        if self.fields == 1:
            if self.kind == "jacobi":
                return self.inv_diag * r
            return _ilu0_solve(self.a.indptr, self.a.indices, self.lu, self.diag, r)
        rb = np.ascontiguousarray(r.reshape(self.fields, -1).T)
        if self.kind == "jacobi":
            z = np.einsum("nij,nj->ni", self.dinv, rb)
        else:
            z = _bilu0_solve(self.bptr, self.bidx, self.lu, self.diag, self.piv_inv, rb)
        return z.T.ravel()


# --- GMRES ----------------------------------------------------------------------------

@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    wall_time: float
    message: str = ""


class SolverError(RuntimeError):
    def __init__(self, report: SolveReport):
        super().__init__(f"linear solve failed: {report.message} "
                         f"(iterations={report.iterations}, residual={report.residual:.3e})")
        self.report = report


def solve(a: SparseMatrix, b, tol: float = 1e-9, maxit: int = 2000, preconditioner="ilu0",
          x0=None, restart: int = 100, fields: int = 1):
    """Right-preconditioned restarted GMRES; returns (x, SolveReport).

    ``preconditioner`` is a name or a prebuilt :class:`Preconditioner`.
    The relative residual is ||b - A x|| / ||b||.
    """
    t0 = time.perf_counter()
    n = a.n_rows
    if a.n_rows != a.n_cols:
        raise ValueError("matrix must be square")
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    b = np.asarray(b, dtype=float)
    if b.shape != (n,):
        raise ValueError("rhs dimension mismatch")
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), SolveReport(0, 0.0, True, time.perf_counter() - t0)
    prec = preconditioner if isinstance(preconditioner, Preconditioner) \
        else Preconditioner(a, preconditioner, fields)
    r = b - a.matvec(x)
    rel = np.linalg.norm(r) / bnorm
    its = 0
    m = min(restart, n)
    while rel > tol and its < maxit:
        beta = np.linalg.norm(r)
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n))
        H = np.zeros((m + 1, m))
        cs, sn = np.zeros(m), np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        breakdown = False
        while k < m and its < maxit:
            Z[k] = prec.apply(V[k])
            w = a.matvec(Z[k])
            # classical Gram-Schmidt; second pass when cancellation is large
            wn0 = np.linalg.norm(w)
            h = V[:k + 1] @ w
            w -= h @ V[:k + 1]
            hn = np.linalg.norm(w)
            if hn < REORTH * wn0:
                h2 = V[:k + 1] @ w
                w -= h2 @ V[:k + 1]
                h += h2
                hn = np.linalg.norm(w)
            H[:k + 1, k] = h
            H[k + 1, k] = hn
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            if denom == 0:
                breakdown = True
                break
            cs[k], sn[k] = H[k, k] / denom, H[k + 1, k] / denom
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            its += 1
            k += 1
            if hn == 0 or abs(g[k]) / bnorm <= tol:
                if hn == 0:
                    breakdown = True
                break
            V[k] = w / hn
        if k:
            y = _back_substitute(H[:k, :k], g[:k])
            x += y @ Z[:k]
        r = b - a.matvec(x)
        new_rel = np.linalg.norm(r) / bnorm
        if breakdown and new_rel > tol and new_rel >= rel:
            rel = new_rel
            return x, SolveReport(its, rel, False, time.perf_counter() - t0, "breakdown")
        rel = new_rel
    ok = bool(rel <= tol)
    return x, SolveReport(its, float(rel), ok, time.perf_counter() - t0,
                          "" if ok else "maximum iterations exceeded")


def _back_substitute(r, g):
    k = len(g)
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - r[i, i + 1:] @ y[i + 1:]) / r[i, i]
    return y


def dense_solve(a: SparseMatrix, b) -> np.ndarray:
    """Direct dense solve; only for small systems (oracles and tests)."""
    if a.n_rows > DENSE_LIMIT:
        raise ValueError(f"dense fallback limited to {DENSE_LIMIT} unknowns")
    return np.linalg.solve(a.to_dense(), np.asarray(b, dtype=float))
