"""POD and DEIM reduction.

The index-aware reduced model keeps the split into a differential and an
algebraic part: ``xi_p ~ V_p xi_pr``, ``xi_q ~ V_q xi_qr`` with

    E_pr xi_pr' = A_pr xi_pr + f_pr(xi_pr) + B_pr u
    E_qr xi_qr  = A_qr xi_pr + f_qr(xi_pr) + B_qr u
    y = C_pr xi_pr + C_qr xi_qr .

DEIM is applied to the active rows of the underlying nonlinearity ``f``
rather than to ``f_p`` and ``f_q`` separately.  Both are fixed linear images
of ``f``, so one interpolant serves both, and the online work is the number
of interpolation rows whatever the density of the left projections.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import (
    DimensionError,
    EmptySnapshotsError,
    RankDeficiencyError,
    SingularReducedPencilError,
    ValidationError,
    ZeroReferenceError,
)
from .pencil import as_dense

DEFAULT_ENERGY = 1.0 - 1e-8


def _fix_signs(U):
    """Make the largest-magnitude entry of every column positive."""
    if U.size == 0:
        return U
    idx = np.argmax(np.abs(U), axis=0)
    s = np.sign(U[idx, np.arange(U.shape[1])])
    s[s == 0] = 1.0
    return U * s


def _svd(S):
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[1] == 0 or S.shape[0] == 0:
        raise EmptySnapshotsError("snapshot matrix has no columns")
    if not np.all(np.isfinite(S)):
        raise ValidationError("snapshots contain non-finite entries")
    U, sv, _ = la.svd(S, full_matrices=False)
    return U, sv


def pod_basis(snapshots, r: Optional[int] = None, energy: Optional[float] = None, return_singular_values=False):
    """Leading left singular vectors of the snapshot matrix.

    Give a rank ``r`` or an energy fraction (default ``1 - 1e-8``); with an
    energy fraction the smallest ``r`` capturing it is kept.
    """
    U, sv = _svd(snapshots)
    if r is not None and energy is not None:
        raise ValidationError("give either r or energy, not both")
    if r is None:
        frac = DEFAULT_ENERGY if energy is None else float(energy)
        if not 0 < frac <= 1:
            raise ValidationError("energy must lie in (0, 1]")
        e = sv**2
        if e.sum() == 0:
            raise EmptySnapshotsError("all snapshots are zero")
        cum = np.cumsum(e) / e.sum()
        r = int(np.searchsorted(cum, frac * (1 - 1e-14)) + 1)
    r = int(r)
    if not 0 <= r <= U.shape[1]:
        raise ValidationError(f"r = {r} exceeds the snapshot rank bound {U.shape[1]}")
    V = _fix_signs(U[:, :r].copy())
    return (V, sv) if return_singular_values else V


def block_pod_basis(snapshots, blocks, r: Optional[int] = None, energy: Optional[float] = None):
    """Block-diagonal POD basis, one orthonormal block per row group.

    Useful when row groups live on very different scales (fluxes next to
    pressures).  With a total rank ``r`` the columns go to the largest
    singular values relative to each block's leading one; with an energy
    fraction every block keeps that fraction of its own energy.
    """
    X = np.asarray(snapshots, dtype=float)
    blocks = [np.asarray(b, dtype=int) for b in blocks]
    cover = np.sort(np.concatenate(blocks)) if blocks else np.zeros(0, dtype=int)
    if not np.array_equal(cover, np.arange(X.shape[0])):
        raise ValidationError("blocks must partition the snapshot rows")
    if r is not None and energy is not None:
        raise ValidationError("give either r or energy, not both")
    svds = []
    for b in blocks:
        U, sv = _svd(X[b])
        svds.append((U, sv))
    if r is None:
        ranks = []
        for U, sv in svds:
            if not np.any(sv):
                ranks.append(0)
                continue
            e = sv**2
            frac = DEFAULT_ENERGY if energy is None else float(energy)
            ranks.append(int(np.searchsorted(np.cumsum(e) / e.sum(), frac * (1 - 1e-14)) + 1))
    else:
        cand = []
        for k, (U, sv) in enumerate(svds):
            if sv.size and sv[0] > 0:
                cand += [(-(v / sv[0]), k, i) for i, v in enumerate(sv) if v > 0]
        cand.sort()
        if r > len(cand):
            raise ValidationError(f"r = {r} exceeds the total snapshot rank {len(cand)}")
        ranks = [0] * len(blocks)
        for _, k, _ in cand[:r]:
            ranks[k] += 1
    V = np.zeros((X.shape[0], sum(ranks)))
    col = 0
    for b, (U, _), rk in zip(blocks, svds, ranks):
        V[b, col:col + rk] = _fix_signs(U[:, :rk])
        col += rk
    return V


def supported_deim_size(f_snapshots, tol=1e-10):
    """Numerical rank of the nonlinearity snapshots (the largest usable ``m_f``)."""
    _, sv = _svd(f_snapshots)
    return int(np.sum(sv > tol * sv[0])) if sv.size and sv[0] > 0 else 0


@dataclass(frozen=True)
class DeimInterpolant:
    """``f ~ U (U[rows])^{-1} f[rows]``."""

    U: np.ndarray
    rows: np.ndarray

    def __post_init__(self):
        if len(set(self.rows.tolist())) != self.rows.size:
            raise RankDeficiencyError("DEIM rows are not distinct")
        if self.m and la.svdvals(self.U[self.rows])[-1] <= 1e-14 * la.svdvals(self.U[self.rows])[0]:
            raise RankDeficiencyError("U[rows] is singular")

    @classmethod
    def from_basis(cls, U):
        """Greedy row selection on a given basis."""
        U = np.asarray(U, dtype=float)
        m = U.shape[1]
        rows = []
        if m:
            rows.append(int(np.argmax(np.abs(U[:, 0]))))
        for j in range(1, m):
            c = la.solve(U[rows, :j], U[rows, j])
            res = U[:, j] - U[:, :j] @ c
            rows.append(int(np.argmax(np.abs(res))))
        return cls(U, np.asarray(rows, dtype=int))

    @property
    def m(self):
        return self.U.shape[1]

    def coefficient_map(self):
        """``U (U[rows])^{-1}`` as a dense matrix."""
        if self.m == 0:
            return np.zeros((self.U.shape[0], 0))
        return la.solve(self.U[self.rows].T, self.U.T).T

    def interpolate(self, f_rows):
        return self.coefficient_map() @ np.asarray(f_rows)


def deim_interpolant(f_snapshots, m_f: int, tol=1e-12):
    """DEIM from nonlinearity snapshots with ``m_f`` interpolation rows."""
    U, sv = pod_basis(f_snapshots, r=min(m_f, np.asarray(f_snapshots).shape[1]), return_singular_values=True)
    if m_f > U.shape[1] or (m_f and (sv.size < m_f or sv[m_f - 1] <= tol * sv[0])):
        raise RankDeficiencyError(f"snapshots do not support m_f = {m_f}")
    return DeimInterpolant.from_basis(U)


# --------------------------------------------------------------------------
# reduced models


def _dense(M):
    return as_dense(M)


def _check_orthonormal(V, name):
    V = np.asarray(V, dtype=float)
    if V.ndim != 2:
        raise DimensionError(f"{name} must be a matrix")
    if V.shape[1] and np.abs(V.T @ V - np.eye(V.shape[1])).max() > 1e-8:
        raise ValidationError(f"{name} is not orthonormal")
    return V


class _ReducedNonlinearity:
    """``xi_r -> N g(T_sub xi_r [+ S_sub u])`` with only the DEIM rows of ``g``."""

    def __init__(self, f, rows, Tfull, Sfull, left_maps):
        self.restriction = f.restrict(rows)
        deps = self.restriction.deps
        self.T = np.asarray(_dense(Tfull[deps] if not sp.issparse(Tfull) else Tfull[deps]), dtype=float)
        self.S = None if Sfull is None else np.asarray(_dense(Sfull[deps]), dtype=float)
        self.left = left_maps  # tuple of dense (r_x x m) maps

    def z(self, xi, u=None):
        z = self.T @ xi
        if self.S is not None:
            z = z + self.S @ u
        return z

    def values(self, xi, u=None):
        g = self.restriction(self.z(xi, u))
        return tuple(L @ g for L in self.left)

    def jacobians(self, xi, u=None):
        Jg = self.restriction.jacobian(self.z(xi, u)) @ self.T
        return tuple(L @ Jg for L in self.left)


class _ExactReducedNonlinearity:
    """Galerkin projection without DEIM (evaluates the full ``f``)."""

    def __init__(self, f, Tfull, Sfull, left_maps, V):
        self.f, self.Tfull, self.Sfull, self.left, self.V = f, Tfull, Sfull, left_maps, V

    def z(self, xi, u=None):
        z = self.Tfull @ (self.V @ xi)
        if self.Sfull is not None:
            z = z + self.Sfull @ u
        return np.asarray(z).ravel()

    def values(self, xi, u=None):
        g = self.f(self.z(xi, u))[self.f.active_rows]
        return tuple(L @ g for L in self.left)

    def jacobians(self, xi, u=None):
        J = self.f.jacobian(self.z(xi, u))
        J = J[self.f.active_rows]
        JT = J @ self.Tfull
        JT = JT.toarray() if sp.issparse(JT) else np.asarray(JT)
        JV = JT @ self.V
        return tuple(L @ JV for L in self.left)


@dataclass
class ReducedModel:
    """Index-aware reduced model (differential part plus algebraic part)."""

    V_p: np.ndarray
    V_q: np.ndarray
    E_pr: np.ndarray
    A_pr: np.ndarray
    B_pr: np.ndarray
    C_pr: np.ndarray
    E_qr: np.ndarray
    A_qr: np.ndarray
    B_qr: np.ndarray
    C_qr: np.ndarray
    nonlinear_part: object
    has_fq: bool
    n_full: int
    deim: Optional[DeimInterpolant] = None

    def __post_init__(self):
        if self.E_qr.shape[0]:
            s = la.svdvals(self.E_qr)
            if s[-1] <= 1e-13 * s[0]:
                raise SingularReducedPencilError("reduced algebraic block E_qr is singular")
            self._eq = la.lu_factor(self.E_qr)
        else:
            self._eq = None

    @property
    def r_p(self):
        return self.V_p.shape[1]

    @property
    def r_q(self):
        return self.V_q.shape[1]

    @property
    def r(self):
        return self.r_p + self.r_q

    # differential protocol
    @property
    def mass(self):
        return self.E_pr

    @property
    def A(self):
        return self.A_pr

    @property
    def B(self):
        return self.B_pr

    input_rate = None

    @property
    def is_linear(self):
        return self.nonlinear_part is None

    def nonlinear(self, xi, u):
        return self.nonlinear_part.values(xi)[0]

    def nonlinear_jacobian(self, xi, u):
        return self.nonlinear_part.jacobians(xi)[0]

    def algebraic(self, xi, u):
        rhs = self.A_qr @ xi + self.B_qr @ u
        if self.has_fq:
            rhs = rhs + self.nonlinear_part.values(xi)[1]
        return la.lu_solve(self._eq, rhs) if self._eq is not None else np.zeros(0)

    def output(self, xi_p, xi_q):
        return self.C_pr @ xi_p + self.C_qr @ xi_q

    def lift(self, xi_p, xi_q):
        """Approximations of ``(xi_p, xi_q)`` in full coordinates."""
        return self.V_p @ xi_p, self.V_q @ xi_q


def build_irom(dec, V_p, V_q, deim: Optional[DeimInterpolant] = None) -> ReducedModel:
    """Project a decoupled system onto ``V_p`` and ``V_q``.

    ``deim`` interpolates the active rows of the underlying nonlinearity;
    without it the nonlinearity is projected exactly (full evaluations).
    """
    V_p = _check_orthonormal(V_p, "V_p")
    V_q = _check_orthonormal(V_q, "V_q")
    if V_p.shape[0] != dec.n_p or V_q.shape[0] != dec.n_q:
        raise DimensionError(f"bases have {V_p.shape[0]} and {V_q.shape[0]} rows, expected {dec.n_p} and {dec.n_q}")
    Ep = _dense(dec.mass)
    E_q = dec.E_q if dec.E_q is not None else sp.identity(dec.n_q)
    coeffs = dict(
        E_pr=V_p.T @ (Ep @ V_p),
        A_pr=V_p.T @ _dense(dec.A_p @ V_p),
        B_pr=V_p.T @ _dense(dec.B_p),
        C_pr=_dense(dec.C_p @ V_p),
        E_qr=V_q.T @ _dense(E_q @ V_q),
        A_qr=V_q.T @ _dense(dec.A_q @ V_p),
        B_qr=V_q.T @ _dense(dec.B_q),
        C_qr=_dense(dec.C_q @ V_q),
    )
    f = dec.nonlinearity
    active = f.active_rows
    has_fq = not dec.f_q.is_zero
    part = None
    if active.size:
        Lp = V_p.T @ dec.f_p.left_columns(active)
        Lq = V_q.T @ dec.f_q.left_columns(active) if has_fq else np.zeros((V_q.shape[1], active.size))
        if deim is None:
            part = _ExactReducedNonlinearity(f, dec.transport, None, (Lp, Lq), V_p)
        else:
            if deim.U.shape[0] != active.size:
                raise DimensionError(f"DEIM basis has {deim.U.shape[0]} rows, nonlinearity has {active.size}")
            P = deim.coefficient_map()
            TV = dec.transport @ V_p
            part = _ReducedNonlinearity(f, active[deim.rows], TV, None, (Lp @ P, Lq @ P))
    return ReducedModel(V_p=V_p, V_q=V_q, nonlinear_part=part, has_fq=has_fq, n_full=dec.n, deim=deim, **coeffs)


@dataclass
class GalerkinModel:
    """One-sided Galerkin projection ``x ~ V x_r`` of a DAE or implicit ODE."""

    V: np.ndarray
    mass: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    input_rate: Optional[np.ndarray]
    nonlinear_part: object
    n_full: int
    deim: Optional[DeimInterpolant] = None

    @property
    def r(self):
        return self.V.shape[1]

    @property
    def is_linear(self):
        return self.nonlinear_part is None

    def nonlinear(self, x, u):
        return self.nonlinear_part.values(x, u)[0]

    def nonlinear_jacobian(self, x, u):
        return self.nonlinear_part.jacobians(x, u)[0]

    def output(self, x):
        return self.C @ x


def _check_regular(M, A, rng, trials=3):
    """Raise if ``det(lam M - A)`` vanishes at random ``lam``."""
    if M.shape[0] == 0:
        return
    scale = max(np.abs(M).max(), 1e-300)
    ascale = max(np.abs(A).max(), 1e-300)
    for _ in range(trials):
        lam = (rng.standard_normal() + 1j * rng.standard_normal()) * ascale / scale
        s = la.svdvals(lam * M - A)
        if s[-1] > 1e-12 * s[0]:
            return
    raise SingularReducedPencilError("reduced pencil (V^T M V, V^T A V) is singular")


def baseline_pod_reduce(system, V, deim: Optional[DeimInterpolant] = None, seed=0) -> GalerkinModel:
    """Galerkin projection of the full (coupled or index-reduced) system.

    ``system`` provides ``mass, A, B, C``, an optional ``input_rate``, and the
    nonlinearity description ``f`` with ``z = K x + S u``.
    """
    V = _check_orthonormal(V, "V")
    if V.shape[0] != system.mass.shape[0]:
        raise DimensionError("V rows must match the system dimension")
    M = V.T @ _dense(system.mass @ V)
    A = V.T @ _dense(system.A @ V)
    _check_regular(M, A, np.random.default_rng(seed))
    rate = getattr(system, "input_rate", None)
    f = system.f
    active = f.active_rows
    part = None
    if active.size:
        L = _dense(V.T[:, active]) if not sp.issparse(V) else V.T[:, active]
        K, S = system.K, getattr(system, "S", None)
        if deim is None:
            part = _ExactReducedNonlinearity(f, K, S, (L,), V)
        else:
            if deim.U.shape[0] != active.size:
                raise DimensionError("DEIM basis does not match the nonlinearity's active rows")
            part = _ReducedNonlinearity(f, active[deim.rows], K @ V, S, (L @ deim.coefficient_map(),))
    return GalerkinModel(
        V=V, mass=M, A=A, B=V.T @ _dense(system.B), C=_dense(system.C @ V),
        input_rate=None if rate is None else V.T @ _dense(rate),
        nonlinear_part=part, n_full=system.mass.shape[0], deim=deim,
    )


# --------------------------------------------------------------------------
# snapshots and errors


def nonlinear_snapshots(f, Z):
    """Active rows of ``f`` at the columns of ``Z`` (arguments ``z``)."""
    active = f.active_rows
    return np.column_stack([f(z)[active] for z in np.asarray(Z).T]) if Z.shape[1] else np.zeros((active.size, 0))


def relative_error(y, y_r, groups=None, zero_reference="raise"):
    """``||y - y_r|| / ||y||`` per channel group (Frobenius norm over time).

    ``groups`` maps names to output-column indices (default: one group
    ``"all"``).  ``output_error`` is the largest group error.  A zero
    reference raises unless ``zero_reference="absolute"``, in which case the
    absolute norm is used and the group is listed under ``"absolute"``.
    """
    y, y_r = np.asarray(y, dtype=float), np.asarray(y_r, dtype=float)
    if y.shape != y_r.shape:
        raise DimensionError(f"output shapes differ: {y.shape} vs {y_r.shape}")
    if y.ndim == 1:
        y, y_r = y[:, None], y_r[:, None]
    if groups is None:
        groups = {"all": np.arange(y.shape[1])}
    out, absolute = {}, []
    for name, idx in groups.items():
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            continue
        ref = np.linalg.norm(y[:, idx])
        diff = np.linalg.norm(y[:, idx] - y_r[:, idx])
        if ref == 0:
            if zero_reference != "absolute":
                raise ZeroReferenceError(f"reference output group {name!r} is identically zero")
            absolute.append(name)
            out[name] = float(diff)
        else:
            out[name] = float(diff / ref)
    out["output_error"] = max(out.values()) if out else 0.0
    if absolute:
        out["absolute"] = absolute
    return out


def percent_reduction(r, n):
    return 100.0 * (1.0 - r / n)
