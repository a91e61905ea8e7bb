"""Rank-revealing sparse Gaussian elimination.

A small LUQ-style factorization for rectangular sparse matrices.  Columns are
chosen by minimum active degree and rows by threshold partial pivoting; entries
whose magnitude falls below ``tol * max|M|`` are treated as zero.  The pivot
rows form an upper trapezoidal factor ``[U11 U12]`` (in pivot order) from
which a sparse kernel basis ``[-U11^{-1} U12; I]`` and a matching
coordinate complement are read off.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular


@dataclass(frozen=True)
class SparseLU:
    shape: tuple
    pivot_rows: tuple
    pivot_cols: tuple
    free_cols: tuple
    u_rows: tuple  # one {col: value} dict per pivot, in pivot order
    scale: float

    @property
    def rank(self):
        return len(self.pivot_cols)

    def coupling(self):
        """Dense ``W = U11^{-1} U12`` restricted to the free columns.

        Returns ``(W, nz)`` where ``nz`` lists free-column positions that
        couple to any pivot row; the others have identically zero columns.
        """
        r = self.rank
        k = len(self.free_cols)
        if r == 0 or k == 0:
            return np.zeros((r, k)), np.arange(k)
        col_pos = {c: t for t, c in enumerate(self.pivot_cols)}
        free_pos = {c: t for t, c in enumerate(self.free_cols)}
        ui, uj, uv, fi, fj, fv = [], [], [], [], [], []
        for t, row in enumerate(self.u_rows):
            for c, v in row.items():
                if c in col_pos:
                    ui.append(t)
                    uj.append(col_pos[c])
                    uv.append(v)
                else:
                    fi.append(t)
                    fj.append(free_pos[c])
                    fv.append(v)
        U11 = sp.csr_matrix((uv, (ui, uj)), shape=(r, r))
        U12 = sp.csc_matrix((fv, (fi, fj)), shape=(r, k))
        nz = np.flatnonzero(np.diff(U12.indptr))
        W = np.zeros((r, k))
        if nz.size:
            rhs = U12[:, nz].toarray()
            W[:, nz] = spsolve_triangular(U11, rhs, lower=False)
        return W, nz


def sparse_lu(M, tol=1e-10, pivot_threshold=0.1):
    """Factor ``M`` by sparse elimination, stopping when no entry exceeds the drop level."""
    M = sp.csr_matrix(M, dtype=float)
    m, n = M.shape
    scale = float(abs(M).max()) if M.nnz else 0.0
    drop = tol * scale

    rows = [dict() for _ in range(m)]
    cols = [set() for _ in range(n)]
    for i in range(m):
        lo, hi = M.indptr[i], M.indptr[i + 1]
        for j, v in zip(M.indices[lo:hi], M.data[lo:hi]):
            if abs(v) > drop:
                rows[i][int(j)] = float(v)
                cols[int(j)].add(i)

    heap = [(len(cols[j]), j) for j in range(n) if cols[j]]
    heapq.heapify(heap)
    done = set()
    pivot_rows, pivot_cols, u_rows = [], [], []

    while heap:
        count, c = heapq.heappop(heap)
        if c in done or not cols[c]:
            continue
        if count != len(cols[c]):
            heapq.heappush(heap, (len(cols[c]), c))
            continue

        best, best_key = None, None
        for i in cols[c]:
            v = abs(rows[i][c])
            rmax = max(abs(x) for x in rows[i].values())
            ok = v >= pivot_threshold * rmax
            key = (ok, v if ok else v / rmax, -i)
            if best_key is None or key > best_key:
                best, best_key = i, key
        r = best
        prow = rows[r]
        piv = prow[c]
        for j in prow:
            cols[j].discard(r)

        touched = set(prow)
        for i in list(cols[c]):
            row_i = rows[i]
            factor = row_i.pop(c) / piv
            for j, v in prow.items():
                if j == c:
                    continue
                new = row_i.get(j, 0.0) - factor * v
                if abs(new) <= drop:
                    if j in row_i:
                        del row_i[j]
                        cols[j].discard(i)
                else:
                    if j not in row_i:
                        cols[j].add(i)
                    row_i[j] = new
        cols[c].clear()
        done.add(c)
        pivot_rows.append(r)
        pivot_cols.append(c)
        u_rows.append(prow)
        rows[r] = {}
        for j in touched:
            if j not in done and cols[j]:
                heapq.heappush(heap, (len(cols[j]), j))

    free = tuple(j for j in range(n) if j not in done)
    return SparseLU(
        shape=(m, n),
        pivot_rows=tuple(pivot_rows),
        pivot_cols=tuple(pivot_cols),
        free_cols=free,
        u_rows=tuple(u_rows),
        scale=scale,
    )


def lu_kernel_bases(M, tol=1e-10):
    """Kernel basis of ``M`` and a coordinate complement, both sparse.

    Returns ``(q, q_left, p, p_left)`` with ``q`` spanning Ker M, ``p`` the unit
    vectors of the pivot columns, and left inverses satisfying
    ``q q_left + p p_left = I`` and ``q_left p = 0``, ``p_left q = 0``.
    """
    lu = sparse_lu(M, tol=tol)
    n = lu.shape[1]
    r, k = lu.rank, len(lu.free_cols)
    W, _ = lu.coupling()
    pc = np.asarray(lu.pivot_cols, dtype=int)
    fc = np.asarray(lu.free_cols, dtype=int)

    # q = [-W; I] scattered to (pivot, free) positions
    Wc = sp.coo_matrix(W)
    qi = np.concatenate([pc[Wc.row], fc])
    qj = np.concatenate([Wc.col, np.arange(k)])
    qv = np.concatenate([-Wc.data, np.ones(k)])
    q = sp.csc_matrix((qv, (qi, qj)), shape=(n, k))
    q_left = sp.csr_matrix((np.ones(k), (np.arange(k), fc)), shape=(k, n))

    p = sp.csc_matrix((np.ones(r), (pc, np.arange(r))), shape=(n, r))
    pi = np.concatenate([np.arange(r), Wc.row])
    pj = np.concatenate([pc, fc[Wc.col]])
    pv = np.concatenate([np.ones(r), Wc.data])
    p_left = sp.csr_matrix((pv, (pi, pj)), shape=(r, n))
    return q, q_left, p, p_left
