"""Matrix-pencil machinery: kernel bases, projector chains, tractability index,
finite spectra.

Matrices may be dense ``ndarray`` or ``scipy.sparse``.  Small problems go
through the SVD (orthogonal projectors); large sparse problems go through the
rank-revealing sparse LU in :mod:`imor.sparse_lu`, which yields oblique
projectors along coordinate directions but keeps everything sparse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DimensionError,
    IndexExceededError,
    RankDeficiencyError,
    SingularPencilError,
)
from .sparse_lu import lu_kernel_bases

DENSE_LIMIT = 1000


def as_dense(M):
    return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)


def is_sparse(M):
    return sp.issparse(M)


def _pick_method(M, method):
    if method != "auto":
        return method
    return "lu" if sp.issparse(M) and max(M.shape) > DENSE_LIMIT else "svd"


def mat_norm(M):
    """Frobenius norm for dense or sparse input."""
    if sp.issparse(M):
        return float(spla.norm(M)) if M.nnz else 0.0
    return float(np.linalg.norm(M))


def equilibrate(M, columns=True):
    """Scale rows (and then columns) of ``M`` to unit max-norm; zero lines are kept.

    Row scaling leaves the kernel unchanged, so kernel computations use
    ``columns=False``; rank tests on badly scaled matrices use both.
    """
    if sp.issparse(M):
        M = sp.csr_matrix(M, dtype=float)
        r = np.asarray(abs(M).max(axis=1).todense()).ravel()
        M = sp.diags(np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), 1.0)) @ M
        if columns:
            c = np.asarray(abs(M).max(axis=0).todense()).ravel()
            M = M @ sp.diags(np.where(c > 0, 1.0 / np.where(c > 0, c, 1.0), 1.0))
        return M.tocsr()
    M = np.array(M, dtype=float)
    if M.size == 0:
        return M
    r = np.abs(M).max(axis=1)
    M /= np.where(r > 0, r, 1.0)[:, None]
    if columns:
        c = np.abs(M).max(axis=0)
        M /= np.where(c > 0, c, 1.0)[None, :]
    return M


@dataclass(frozen=True)
class BasisPair:
    """Column basis together with a left inverse (``left_inverse @ basis = I``)."""

    basis: object
    left_inverse: object

    @property
    def dim(self):
        return self.basis.shape[1]

    @property
    def n(self):
        return self.basis.shape[0]

    def projector(self):
        return self.basis @ self.left_inverse


def nullspace_basis(M, tol=1e-10, method="auto"):
    """Basis of Ker M with its left inverse.

    ``method`` is ``"svd"`` (orthonormal basis), ``"lu"`` (sparse elimination,
    identity on the free columns) or ``"auto"``.
    """
    return kernel_pair(M, tol=tol, method=method)[0]


def kernel_pair(M, tol=1e-10, method="auto"):
    """Return ``(q, p)``: a kernel basis of M and a basis of a complement.

    The left inverses are mutually consistent, so ``q.projector()`` and
    ``p.projector()`` are complementary projectors with ``Im Q = Ker M``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    method = _pick_method(M, method)
    n = M.shape[1]
    M = equilibrate(M, columns=False)
    if method == "lu":
        q, ql, p, pl = lu_kernel_bases(M, tol=tol)
        return BasisPair(q, ql), BasisPair(p, pl)
    if method != "svd":
        raise ValueError(f"unknown method {method!r}")
    if M.shape[0] == 0:
        I = np.eye(n)
        return BasisPair(I, I.copy()), BasisPair(I[:, :0], I[:0, :])
    _, sv, Vt = la.svd(as_dense(M))
    r = int(np.sum(sv > tol * sv[0])) if sv.size and sv[0] > 0 else 0
    kernel = Vt[r:].T.copy()
    rowspace = Vt[:r].T.copy()
    return BasisPair(kernel, kernel.T.copy()), BasisPair(rowspace, rowspace.T.copy())


def left_inverse(B, tol=1e-10):
    """Left inverse of a full-column-rank matrix via a QR factorization."""
    B = as_dense(B)
    n, k = B.shape
    if k == 0:
        return np.zeros((0, n))
    Qf, R = la.qr(B, mode="economic")
    d = np.abs(np.diag(R))
    if d.min() <= tol * max(d.max(), 1e-300):
        raise RankDeficiencyError("columns are linearly dependent to tolerance")
    return la.solve_triangular(R, Qf.T)


def matrix_rank(M, tol=1e-10, method="auto"):
    """Numerical rank after row equilibration."""
    method = _pick_method(M, method)
    M = equilibrate(M, columns=False)
    if method == "svd":
        M = as_dense(M)
        if M.size == 0:
            return 0
        s = la.svdvals(M)
        return int(np.sum(s > tol * s[0])) if s[0] > 0 else 0
    q, _ = kernel_pair(M, tol=tol, method="lu")
    return M.shape[1] - q.dim


def is_nonsingular(M, tol=1e-10, method="auto"):
    """Rank test for a square matrix.

    The matrix is equilibrated first.  The sparse path uses SuperLU and accepts
    when the smallest pivot is above ``tol`` relative to the largest one.
    """
    n = M.shape[0]
    if M.shape != (n, n):
        raise DimensionError(f"expected square matrix, got {M.shape}")
    if n == 0:
        return True
    method = _pick_method(M, method)
    M = equilibrate(M)
    if method == "svd":
        return matrix_rank(M, tol, "svd") == n
    try:
        lu = spla.splu(sp.csc_matrix(M))
    except RuntimeError:
        return False
    d = np.abs(lu.U.diagonal())
    return bool(d.min() > tol * d.max())


@dataclass(frozen=True)
class ChainStage:
    E: object
    A: object
    Q: object
    P: object
    kernel: Optional[BasisPair] = None
    complement: Optional[BasisPair] = None


@dataclass(frozen=True)
class ProjectorChain:
    """Matrix and projector chain ``E_{j+1} = E_j - A_j Q_j``, ``A_{j+1} = A_j P_j``.

    ``stages[index]`` holds the first nonsingular ``E``; its projector pair is
    ``Q = 0``, ``P = I``.
    """

    stages: tuple
    index: int
    rank_tolerance: float
    method: str = "svd"
    ranks: tuple = field(default=())

    @property
    def n(self):
        return self.stages[0].E.shape[0]

    def residuals(self):
        """Max residuals of the chain identities over all stages."""
        out = {"idempotency": 0.0, "kernel": 0.0, "recursion": 0.0, "identity_E": 0.0, "identity_A": 0.0}
        for j, st in enumerate(self.stages[:-1]):
            Q, E = st.Q, st.E
            out["idempotency"] = max(out["idempotency"], mat_norm(Q @ Q - Q))
            out["kernel"] = max(out["kernel"], mat_norm(E @ Q) / max(mat_norm(E), 1.0))
            nxt = self.stages[j + 1]
            out["recursion"] = max(out["recursion"], mat_norm(nxt.E - (E - st.A @ Q)))
            out["identity_E"] = max(out["identity_E"], mat_norm(nxt.E @ st.P - E) / max(mat_norm(E), 1.0))
            out["identity_A"] = max(
                out["identity_A"], mat_norm((nxt.A - nxt.E @ Q) - st.A) / max(mat_norm(st.A), 1.0)
            )
        return out

    def admissibility_residual(self):
        """Max ``||Q_j Q_i||`` for ``j > i``; zero by construction for index <= 1."""
        Qs = [st.Q for st in self.stages[:-1]]
        worst = 0.0
        for i in range(len(Qs)):
            for j in range(i + 1, len(Qs)):
                worst = max(worst, mat_norm(Qs[j] @ Qs[i]))
        return worst


def _identity(n, sparse):
    return sp.identity(n, format="csr") if sparse else np.eye(n)


def _zeros(n, sparse):
    return sp.csr_matrix((n, n)) if sparse else np.zeros((n, n))


def build_projector_chain(E, A, max_index=3, tol=1e-10, method="auto"):
    """Build the projector chain of ``(E, A)`` and detect its tractability index.

    Raises :class:`IndexExceededError` if ``E_j`` is still singular after
    ``max_index`` steps and :class:`SingularPencilError` when
    ``Ker E_j`` meets ``Ker A_j`` (the pencil is then singular).
    """
    if max_index < 1:
        raise ValueError("max_index must be >= 1")
    n = E.shape[0]
    if E.shape != (n, n) or A.shape != (n, n):
        raise DimensionError(f"E and A must be square of equal size, got {E.shape} and {A.shape}")
    method = _pick_method(E, method)
    sparse = method == "lu"
    if sparse:
        E, A = sp.csr_matrix(E, dtype=float), sp.csr_matrix(A, dtype=float)
    else:
        E, A = as_dense(E), as_dense(A)

    stages, ranks = [], []
    Ej, Aj = E, A
    for j in range(max_index + 1):
        if is_nonsingular(Ej, tol=tol, method=method):
            ranks.append(n)
            stages.append(ChainStage(Ej, Aj, _zeros(n, sparse), _identity(n, sparse)))
            return ProjectorChain(tuple(stages), j, tol, method, tuple(ranks))
        if j == max_index:
            break
        q, p = kernel_pair(Ej, tol=tol, method=method)
        ranks.append(n - q.dim)
        Aq = Aj @ q.basis
        if q.dim and matrix_rank(Aq, tol=tol, method=_pick_method(Aq, "auto")) < q.dim:
            raise SingularPencilError(f"Ker E_{j} intersects Ker A_{j}: the pencil is singular")
        Q = q.projector()
        P = p.projector()
        if sparse:
            Q, P = sp.csr_matrix(Q), sp.csr_matrix(P)
        stages.append(ChainStage(Ej, Aj, Q, P, q, p))
        Ej, Aj = Ej - Aj @ Q, Aj @ P
    raise IndexExceededError(
        f"E_j singular through j = {max_index}; index > {max_index} or the pencil is not regular"
    )


def finite_spectrum(E, A, tol=1e-10):
    """Finite generalized eigenvalues of ``lambda E - A`` (dense QZ)."""
    E, A = as_dense(E), as_dense(A)
    n = E.shape[0]
    if n == 0:
        return np.zeros(0, dtype=complex)
    w, V = la.eig(A, E, homogeneous_eigvals=True)
    alpha, beta = w[0], w[1]
    nE, nA = np.linalg.norm(E), np.linalg.norm(A)
    small = np.sqrt(np.finfo(float).eps)
    if np.any((np.abs(alpha) <= small * max(nA, 1e-300)) & (np.abs(beta) <= small * max(nE, 1e-300))):
        raise SingularPencilError("alpha and beta vanish together: singular pencil")
    # residual of beta*A v = alpha*E v, relative to the pencil scale
    res = np.linalg.norm(beta * (A @ V) - alpha * (E @ V), axis=0)
    res /= (np.abs(beta) * nA + np.abs(alpha) * nE) * np.linalg.norm(V, axis=0)
    finite = (np.abs(beta) > tol * np.abs(alpha)) & (res <= 1e-6)
    lam = alpha[finite] / beta[finite]
    lam = lam[np.abs(lam) <= 1.0 / tol]
    return lam[np.lexsort((lam.real, lam.imag))]


def match_spectra(lam, mu):
    """Largest distance between optimally paired eigenvalues, relative to ``max |lam|``.

    Returns ``inf`` when the counts differ.
    """
    from scipy.optimize import linear_sum_assignment

    lam, mu = np.asarray(lam), np.asarray(mu)
    if lam.size != mu.size:
        return np.inf
    if lam.size == 0:
        return 0.0
    cost = np.abs(lam[:, None] - mu[None, :])
    i, j = linear_sum_assignment(cost)
    return float(cost[i, j].max() / max(np.abs(lam).max(), np.finfo(float).tiny))
