"""Index-1 decoupling of ``E x' = A x + f(Ex) + B u``, ``y = C x``.

The state splits as ``x = q0 xi_q + p0 xi_p`` with ``p0``, ``q0`` bases of
``Im P0`` and ``Ker E0``.  Two equivalent forms are provided:

explicit
    ``xi_p' = A_p xi_p + f_p(xi_p) + B_p u`` and
    ``xi_q = A_q xi_p + f_q(xi_p) + B_q u``; coefficients carry ``E1^{-1}``,
    applied through a stored factorization.
implicit
    ``E_p xi_p' = ...`` and ``E_q xi_q = ...`` with the projections
    ``p_hat^T``, ``q_hat^T`` in place of ``E1^{-1}``.

Nonlinearities are objects (see :class:`Nonlinearity`) so that reduced models
can evaluate only a few rows of them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DimensionError,
    IndexNotOneError,
    SingularAlgebraicBlockError,
    SingularE1Error,
    SingularSubsystemError,
)
from .pencil import BasisPair, ProjectorChain, as_dense, equilibrate, kernel_pair

CONDITION_WARN = 1e12


# --------------------------------------------------------------------------
# nonlinearities


class Nonlinearity:
    """``f(z)`` with ``z = E x``.

    Subclasses implement ``__call__`` and ``jacobian`` (``df/dz``) and may
    override ``active_rows`` (rows where ``f`` can be nonzero) and
    ``restrict`` (cheap evaluation of a few rows).
    """

    size: int

    def __call__(self, z):
        raise NotImplementedError

    def jacobian(self, z):
        raise NotImplementedError

    @property
    def active_rows(self):
        return np.arange(self.size)

    def restrict(self, rows):
        return _FullRestriction(self, np.asarray(rows, dtype=int))


class _FullRestriction:
    """Fallback restriction: depends on all of ``z``."""

    def __init__(self, f, rows):
        self.f = f
        self.rows = rows
        self.deps = np.arange(f.size)

    def __call__(self, z_deps):
        return self.f(z_deps)[self.rows]

    def jacobian(self, z_deps):
        J = self.f.jacobian(z_deps)
        return as_dense(J[self.rows]) if not sp.issparse(J) else J[self.rows].toarray()


class ZeroNonlinearity(Nonlinearity):
    def __init__(self, size):
        self.size = int(size)

    def __call__(self, z):
        return np.zeros(self.size)

    def jacobian(self, z):
        return sp.csr_matrix((self.size, self.size))

    @property
    def active_rows(self):
        return np.zeros(0, dtype=int)

    def restrict(self, rows):
        return _ComponentRestriction(np.asarray(rows, dtype=int), lambda v: 0.0 * v, lambda v: 0.0 * v)


class FunctionNonlinearity(Nonlinearity):
    """Wrap a plain callable ``f(z)``.

    Without ``jac`` the Jacobian is a forward difference with step
    ``sqrt(eps) * (1 + |z_i|)``.
    """

    def __init__(self, fun: Callable, size: int, jac: Optional[Callable] = None):
        self.fun = fun
        self.size = int(size)
        self._jac = jac

    def __call__(self, z):
        return np.asarray(self.fun(np.asarray(z, dtype=float)), dtype=float)

    def jacobian(self, z):
        z = np.asarray(z, dtype=float)
        if self._jac is not None:
            return self._jac(z)
        f0 = self(z)
        J = np.empty((self.size, z.size))
        h0 = np.sqrt(np.finfo(float).eps)
        for i in range(z.size):
            h = h0 * (1.0 + abs(z[i]))
            zp = z.copy()
            zp[i] += h
            J[:, i] = (self(zp) - f0) / h
        return J


class ComponentwiseNonlinearity(Nonlinearity):
    """``f_i(z) = phi(z_i)`` on ``rows``, zero elsewhere."""

    def __init__(self, size, rows, phi, dphi):
        self.size = int(size)
        self.rows = np.asarray(rows, dtype=int)
        self.phi = phi
        self.dphi = dphi

    def __call__(self, z):
        out = np.zeros(self.size)
        out[self.rows] = self.phi(np.asarray(z)[self.rows])
        return out

    def jacobian(self, z):
        d = self.dphi(np.asarray(z)[self.rows])
        return sp.csr_matrix((d, (self.rows, self.rows)), shape=(self.size, self.size))

    @property
    def active_rows(self):
        return self.rows

    def restrict(self, rows):
        rows = np.asarray(rows, dtype=int)
        mask = np.isin(rows, self.rows).astype(float)
        return _ComponentRestriction(rows, lambda v: mask * self.phi(v), lambda v: mask * self.dphi(v))


class _ComponentRestriction:
    def __init__(self, rows, phi, dphi):
        self.rows = rows
        self.deps = rows
        self._phi = phi
        self._dphi = dphi

    def __call__(self, z_deps):
        return np.asarray(self._phi(np.asarray(z_deps, dtype=float)), dtype=float)

    def jacobian(self, z_deps):
        return np.diag(np.asarray(self._dphi(np.asarray(z_deps, dtype=float)), dtype=float))


# --------------------------------------------------------------------------
# systems


def _solve_factory(M):
    """Return a solver ``b -> M^{-1} b`` for a square dense or sparse matrix."""
    if sp.issparse(M):
        lu = spla.splu(sp.csc_matrix(M))
        return lambda b: lu.solve(np.asarray(b, dtype=float))
    fac = la.lu_factor(as_dense(M), check_finite=False)
    return lambda b: la.lu_solve(fac, b, check_finite=False)


@dataclass(frozen=True)
class DescriptorSystem:
    """``E x' = A x + f(E x) + B u``, ``y = C x``."""

    E: object
    A: object
    B: object
    C: object
    f: Nonlinearity = None
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.E.shape[0]
        if self.E.shape != (n, n) or self.A.shape != (n, n):
            raise DimensionError(f"E, A must be {n}x{n}")
        if self.B.shape[0] != n or self.C.shape[1] != n:
            raise DimensionError("B rows and C columns must equal n")
        if self.f is None:
            object.__setattr__(self, "f", ZeroNonlinearity(n))
        elif self.f.size != n:
            raise DimensionError(f"nonlinearity size {self.f.size} != {n}")

    @property
    def n(self):
        return self.E.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    @property
    def ell(self):
        return self.C.shape[0]

    # integrator protocol
    @property
    def mass(self):
        return self.E

    input_rate = None
    S = None

    @property
    def K(self):
        """``z = K x`` is the argument of the nonlinearity."""
        return self.E

    @property
    def is_linear(self):
        return self.f.active_rows.size == 0

    def nonlinear(self, x, u):
        return self.f(self.E @ x)

    def nonlinear_jacobian(self, x, u):
        J = self.f.jacobian(self.E @ x)
        return J @ self.E

    def output(self, x):
        return self.C @ x


class ProjectedNonlinearity:
    """``xi -> L f(T xi)`` with ``T = E1 p0`` and a left map ``L``.

    ``L`` is either a matrix or a callable applied to column blocks.
    """

    def __init__(self, f: Nonlinearity, T, left, left_cols: Callable):
        self.f = f
        self.T = T
        self._left = left
        self._left_cols = left_cols

    def _apply_left(self, v):
        return self._left(v) if callable(self._left) else self._left @ v

    def __call__(self, xi):
        return np.asarray(self._apply_left(self.f(self.T @ xi))).ravel()

    def jacobian(self, xi):
        rows = self.f.active_rows
        if rows.size == 0:
            k = self.T.shape[1]
            return np.zeros((self.left_columns(rows).shape[0], k))
        J = self.f.jacobian(self.T @ xi)
        J = J[rows] if sp.issparse(J) else np.asarray(J)[rows]
        JT = J @ self.T
        if sp.issparse(self._left) and sp.issparse(JT):
            return (self._left[:, rows] @ JT).tocsr()
        JT = JT.toarray() if sp.issparse(JT) else np.asarray(JT)
        return self.left_columns(rows) @ JT

    def left_columns(self, rows):
        """Dense ``L[:, rows]``."""
        return self._left_cols(np.asarray(rows, dtype=int))

    @cached_property
    def is_zero(self):
        rows = self.f.active_rows
        if rows.size == 0:
            return True
        return not np.any(self.left_columns(rows))


@dataclass(frozen=True)
class DecoupledSystem:
    """Differential part ``E_p xi_p' = A_p xi_p + f_p(xi_p) + B_p u``,
    algebraic part ``E_q xi_q = A_q xi_p + f_q(xi_p) + B_q u``,
    output ``y = C_p xi_p + C_q xi_q``.

    In the explicit form ``E_p`` and ``E_q`` are identities (stored as None).
    """

    form: str
    A_p: object
    B_p: object
    A_q: object
    B_q: object
    C_p: object
    C_q: object
    f_p: ProjectedNonlinearity
    f_q: ProjectedNonlinearity
    p0: BasisPair
    q0: BasisPair
    E_p: object = None
    E_q: object = None
    p_hat: object = None
    q_hat: object = None
    E1: object = None
    tolerance: float = 1e-10
    blocks_p: Optional[dict] = None
    blocks_q: Optional[dict] = None
    _eq_solve: object = field(default=None, repr=False, compare=False)

    @property
    def n_p(self):
        return self.p0.dim

    @property
    def n_q(self):
        return self.q0.dim

    @property
    def n(self):
        return self.p0.n

    @property
    def nonlinearity(self):
        return self.f_p.f

    @property
    def transport(self):
        """``T`` with ``z = E x = T xi_p``."""
        return self.f_p.T

    # differential-part integrator protocol
    @property
    def mass(self):
        return self.E_p if self.E_p is not None else sp.identity(self.n_p, format="csr")

    @property
    def A(self):
        return self.A_p

    @property
    def B(self):
        return self.B_p

    input_rate = None

    @property
    def is_linear(self):
        return self.f_p.f.active_rows.size == 0

    def nonlinear(self, xi, u):
        return self.f_p(xi)

    def nonlinear_jacobian(self, xi, u):
        return self.f_p.jacobian(xi)

    def algebraic(self, xi_p, u):
        """Solve the algebraic subsystem for ``xi_q``."""
        rhs = self.A_q @ xi_p + self.B_q @ u
        if not self.f_q.is_zero:
            rhs = rhs + self.f_q(xi_p)
        rhs = np.asarray(rhs).ravel()
        if self.E_q is None:
            return rhs
        return self._eq_solve(rhs)

    def output(self, xi_p, xi_q):
        return np.asarray(self.C_p @ xi_p + self.C_q @ xi_q).ravel()


def _check_index_one(chain: ProjectorChain):
    if chain.index != 1:
        raise IndexNotOneError(f"decoupling requires tractability index 1, got {chain.index}")


def hat_bases(E0, E1, A0, q0: BasisPair, p0: BasisPair, tol=1e-10, method="auto"):
    """Bases ``p_hat`` of ``Ker (E1 q0)^T`` and ``q_hat`` of ``Ker E0^T``.

    ``E1 q0 = -A0 q0`` because ``E0 q0 = 0``, so ``E1`` itself is unused for
    the computation; it is kept in the signature for symmetry with the
    defining relations.
    """
    n_q, n_p = q0.dim, p0.dim
    qh, _ = kernel_pair(_transpose(E0), tol=tol, method=method)
    Aq = A0 @ q0.basis
    ph, _ = kernel_pair(_transpose(Aq), tol=tol, method=method)
    if qh.dim != n_q:
        raise DimensionError(f"dim Ker E0^T = {qh.dim}, expected n_q = {n_q}")
    if ph.dim != n_p:
        raise DimensionError(f"dim Ker (E1 q0)^T = {ph.dim}, expected n_p = {n_p}")
    return ph.basis, qh.basis


def _transpose(M):
    return M.T.tocsr() if sp.issparse(M) else np.ascontiguousarray(as_dense(M).T)


def _dense_or_sparse(M):
    if sp.issparse(M):
        return M.tocsr()
    return np.asarray(M)


def _condition_check(M, name, tol):
    """Raise if ``M`` is singular, warn if it is badly conditioned (after equilibration)."""
    if M.shape[0] == 0:
        return
    Me = equilibrate(M)
    if sp.issparse(Me) and Me.shape[0] > 1000:
        try:
            lu = spla.splu(sp.csc_matrix(Me))
        except RuntimeError as exc:
            raise SingularSubsystemError(f"{name} is singular") from exc
        d = np.abs(lu.U.diagonal())
        ratio = d.max() / d.min() if d.min() > 0 else np.inf
        if not np.isfinite(ratio) or d.min() <= tol * d.max():
            raise SingularSubsystemError(f"{name} is singular (pivot ratio {ratio:.2e})")
        if ratio > CONDITION_WARN:
            warnings.warn(f"{name} pivot ratio {ratio:.2e}", RuntimeWarning, stacklevel=3)
        return
    s = la.svdvals(as_dense(Me))
    if s[-1] <= tol * s[0]:
        raise SingularSubsystemError(f"{name} is singular (sigma_min/sigma_max = {s[-1] / s[0]:.2e})")
    if s[0] / s[-1] > CONDITION_WARN:
        warnings.warn(f"{name} condition number {s[0] / s[-1]:.2e}", RuntimeWarning, stacklevel=3)


def _chain_bases(chain):
    st = chain.stages[0]
    return st.kernel, st.complement


def explicit_decouple(sys: DescriptorSystem, chain: ProjectorChain) -> DecoupledSystem:
    """Explicit decoupled form; ``E1^{-1}`` is applied through an LU factorization."""
    _check_index_one(chain)
    q0, p0 = _chain_bases(chain)
    E0, A0, E1 = chain.stages[0].E, chain.stages[0].A, chain.stages[1].E
    try:
        solve = _solve_factory(E1)
        probe = solve(np.ones(E1.shape[0]))
        if not np.all(np.isfinite(probe)):
            raise ValueError
    except (RuntimeError, ValueError, la.LinAlgError) as exc:
        raise SingularE1Error("E1 could not be factorized") from exc

    pl, ql = p0.left_inverse, q0.left_inverse
    A0p = as_dense(A0 @ p0.basis)
    X = solve(A0p)
    Y = solve(as_dense(sys.B))
    A_p, A_q = as_dense(pl @ X), as_dense(ql @ X)
    B_p, B_q = as_dense(pl @ Y), as_dense(ql @ Y)

    T = _dense_or_sparse(E1 @ p0.basis)

    def make(left):
        def apply(v):
            return left @ solve(v)

        def cols(rows):
            n = E1.shape[0]
            Ecols = np.zeros((n, rows.size))
            Ecols[rows, np.arange(rows.size)] = 1.0
            return as_dense(left @ solve(Ecols)) if rows.size else np.zeros((left.shape[0], 0))

        return ProjectedNonlinearity(sys.f, T, apply, cols)

    return DecoupledSystem(
        form="explicit",
        A_p=A_p,
        B_p=B_p,
        A_q=A_q,
        B_q=B_q,
        C_p=as_dense(sys.C @ p0.basis),
        C_q=as_dense(sys.C @ q0.basis),
        f_p=make(pl),
        f_q=make(ql),
        p0=p0,
        q0=q0,
        E1=E1,
        tolerance=chain.rank_tolerance,
    )


def _matrix_left(L):
    """ProjectedNonlinearity helpers for a left factor given as a matrix ``L``."""
    Ls = L.tocsc() if sp.issparse(L) else np.asarray(L)

    def cols(rows):
        return as_dense(Ls[:, rows])

    return Ls, cols


def implicit_decouple(sys: DescriptorSystem, chain: ProjectorChain, method="auto") -> DecoupledSystem:
    """Implicit decoupled form; no inverse of ``E1`` is formed."""
    _check_index_one(chain)
    q0, p0 = _chain_bases(chain)
    E0, A0, E1 = chain.stages[0].E, chain.stages[0].A, chain.stages[1].E
    p_hat, q_hat = hat_bases(E0, E1, A0, q0, p0, tol=chain.rank_tolerance, method=method)
    return _assemble_implicit(sys, E0, A0, p0, q0, p_hat, q_hat, E1=E1, tol=chain.rank_tolerance)


def _assemble_implicit(sys, E0, A0, p0, q0, p_hat, q_hat, E1=None, tol=1e-10):
    pT = _transpose(p_hat)
    qT = _transpose(q_hat)
    A0p = A0 @ p0.basis
    E_p = _dense_or_sparse(pT @ (E0 @ p0.basis))
    A_p = _dense_or_sparse(pT @ A0p)
    B_p = _dense_or_sparse(pT @ sys.B)
    E_q = _dense_or_sparse(-(qT @ (A0 @ q0.basis)))
    A_q = _dense_or_sparse(qT @ A0p)
    B_q = _dense_or_sparse(qT @ sys.B)
    _condition_check(E_p, "E_p", tol)
    _condition_check(E_q, "E_q", tol)
    try:
        eq_solve = _solve_factory(E_q) if E_q.shape[0] else (lambda b: np.zeros(0))
    except RuntimeError as exc:
        raise SingularAlgebraicBlockError("E_q factorization failed") from exc

    T = _dense_or_sparse(E0 @ p0.basis)  # E1 p0 = E0 p0
    Lp, cp = _matrix_left(pT)
    Lq, cq = _matrix_left(qT)
    return DecoupledSystem(
        form="implicit",
        E_p=E_p,
        A_p=A_p,
        B_p=B_p,
        E_q=E_q,
        A_q=A_q,
        B_q=B_q,
        C_p=_dense_or_sparse(sys.C @ p0.basis),
        C_q=_dense_or_sparse(sys.C @ q0.basis),
        f_p=ProjectedNonlinearity(sys.f, T, Lp, cp),
        f_q=ProjectedNonlinearity(sys.f, T, Lq, cq),
        p0=p0,
        q0=q0,
        p_hat=p_hat,
        q_hat=q_hat,
        E1=E1,
        tolerance=tol,
        _eq_solve=eq_solve,
    )


def consistent_initialize(dec: DecoupledSystem, x0, u0):
    """Project ``x0`` and solve the algebraic part.

    Returns ``(xi_p0, xi_q0, residual)`` where ``residual`` measures how far
    the algebraic coordinates of ``x0`` are from the consistent ones.
    """
    x0 = np.asarray(x0, dtype=float)
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    if x0.shape != (dec.n,):
        raise DimensionError(f"x0 has shape {x0.shape}, expected ({dec.n},)")
    if u0.shape != (dec.B_p.shape[1],):
        raise DimensionError(f"u0 has shape {u0.shape}, expected ({dec.B_p.shape[1]},)")
    xi_p = np.asarray(dec.p0.left_inverse @ x0).ravel()
    xi_q = dec.algebraic(xi_p, u0)
    given = np.asarray(dec.q0.left_inverse @ x0).ravel()
    return xi_p, xi_q, float(np.linalg.norm(given - xi_q))


def recompose_state(dec: DecoupledSystem, xi_p, xi_q):
    """``x = q0 xi_q + p0 xi_p``."""
    xi_p = np.asarray(xi_p, dtype=float)
    xi_q = np.asarray(xi_q, dtype=float)
    if xi_p.shape[0] != dec.n_p or xi_q.shape[0] != dec.n_q:
        raise DimensionError("coordinate dimensions do not match the bases")
    return np.asarray(dec.q0.basis @ xi_q + dec.p0.basis @ xi_p)
