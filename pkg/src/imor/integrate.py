"""Implicit Euler with Newton, decoupled marching and steady states.

Systems are duck-typed.  A system exposes ``mass``, ``A``, ``B``,
``is_linear``, ``nonlinear(x, u)`` and ``nonlinear_jacobian(x, u)``, and may
set ``input_rate`` to a matrix multiplying ``du/dt`` on the right-hand side.
One step solves

    M (x - x_k) / dt = A x + F(x, u) + B u + B_rate du/dt,

with ``u`` and ``du/dt`` taken at ``t_{k+1}``.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    NewtonDivergenceError,
    NonPhysicalPressureError,
    SingularIterationMatrixError,
    ValidationError,
)


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t_end: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValidationError("dt must be positive")
        if not self.t_end > self.t0:
            raise ValidationError("t_end must exceed t0")
        steps = (self.t_end - self.t0) / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValidationError(f"(t_end - t0) / dt = {steps} is not an integer")

    @property
    def steps(self):
        return int(round((self.t_end - self.t0) / self.dt))

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.steps + 1)


@dataclass
class Trajectory:
    times: np.ndarray
    outputs: np.ndarray  # (len(times), ell)
    states: Optional[np.ndarray] = None  # (len(times), n) or None
    algebraic_states: Optional[np.ndarray] = None
    wall_time: float = 0.0
    newton_iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self):
        if len(self.outputs) != len(self.times):
            raise ValidationError("outputs and times differ in length")


def _abs(M):
    return abs(M) if sp.issparse(M) else np.abs(np.asarray(M))


class _LinearSolver:
    """Factorization of the Newton matrix, dense or sparse."""

    def __init__(self, J):
        self.sparse = sp.issparse(J)
        try:
            if self.sparse:
                self._lu = spla.splu(sp.csc_matrix(J))
                d = np.abs(self._lu.U.diagonal())
                if d.size and (d.min() == 0 or not np.all(np.isfinite(d))):
                    raise RuntimeError("zero pivot")
            else:
                J = np.asarray(J, dtype=float)
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", la.LinAlgWarning)
                    self._lu = la.lu_factor(J, check_finite=True)
                d = np.abs(np.diag(self._lu[0]))
                if d.size and d.min() == 0:
                    raise RuntimeError("zero pivot")
        except (RuntimeError, ValueError, la.LinAlgError) as exc:
            raise SingularIterationMatrixError(f"Newton matrix is singular: {exc}") from exc

    def solve(self, b):
        if self.sparse:
            return self._lu.solve(b)
        return la.lu_solve(self._lu, b, check_finite=False)


def _combine(M, A, dt):
    if sp.issparse(M) or sp.issparse(A):
        return (sp.csr_matrix(M) / dt - sp.csr_matrix(A)).tocsc()
    return np.asarray(M) / dt - np.asarray(A)


def _minus(J0, JF):
    if sp.issparse(J0):
        JF = sp.csr_matrix(JF) if not sp.issparse(JF) else JF
        return (J0 - JF).tocsc()
    return J0 - (JF.toarray() if sp.issparse(JF) else np.asarray(JF))


class _Stepper:
    """Newton solver for one implicit Euler step (or a steady state with dt=inf)."""

    def __init__(self, system, dt, rtol=1e-10, atol=0.0, max_iter=25, line_search=False):
        self.sys = system
        self.dt = dt
        self.M = system.mass
        self.A = system.A
        self.B = system.B
        self.rate = getattr(system, "input_rate", None)
        self.rtol, self.atol = rtol, atol
        self.max_iter = max_iter
        self.line_search = line_search
        self.linear = bool(getattr(system, "is_linear", False))
        self.J0 = _combine(self.M, self.A, dt) if np.isfinite(dt) else _combine(self.M * 0.0, self.A, 1.0)
        self.absM, self.absA, self.absB = _abs(self.M), _abs(self.A), _abs(self.B)
        self.absR = _abs(self.rate) if self.rate is not None else None
        self._cached = _LinearSolver(self.J0) if self.linear else None
        self.step_index = 0

    def _forcing(self, u, udot):
        b = np.asarray(self.B @ u).ravel()
        if self.rate is not None:
            b = b + np.asarray(self.rate @ udot).ravel()
        return b

    def _residual(self, x, xk, b, u):
        F = np.zeros_like(x) if self.linear else np.asarray(self.sys.nonlinear(x, u)).ravel()
        Ax = np.asarray(self.A @ x).ravel()
        if np.isfinite(self.dt):
            Mdx = np.asarray(self.M @ (x - xk)).ravel() / self.dt
            sM = np.asarray(self.absM @ np.abs(x - xk)).ravel() / self.dt
        else:
            Mdx = sM = 0.0
        R = Mdx - Ax - F - b
        scale = sM + np.asarray(self.absA @ np.abs(x)).ravel() + np.abs(F) + self._bscale
        return R, scale

    def solve(self, xk, u, udot=None, x_init=None):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        udot = np.zeros_like(u) if udot is None else np.atleast_1d(udot)
        b = self._forcing(u, udot)
        self._bscale = np.asarray(self.absB @ np.abs(u)).ravel()
        if self.absR is not None:
            self._bscale = self._bscale + np.asarray(self.absR @ np.abs(udot)).ravel()
        if self.linear:
            rhs = b + (np.asarray(self.M @ xk).ravel() / self.dt if np.isfinite(self.dt) else 0.0)
            return self._cached.solve(rhs), 1

        x = np.array(xk if x_init is None else x_init, dtype=float)
        R, scale = self._residual(x, xk, b, u)
        for it in range(1, self.max_iter + 1):
            if np.all(np.abs(R) <= self.rtol * scale + self.atol):
                return x, it - 1
            J = _minus(self.J0, self.sys.nonlinear_jacobian(x, u))
            dx = _LinearSolver(J).solve(-R)
            if not np.all(np.isfinite(dx)):
                raise NewtonDivergenceError(self.step_index, float(np.linalg.norm(R)), "non-finite Newton update")
            lam, rn = 1.0, np.linalg.norm(R)
            while True:
                try:
                    xn = x + lam * dx
                    Rn, sn = self._residual(xn, xk, b, u)
                    bad = not np.all(np.isfinite(Rn))
                except NonPhysicalPressureError:
                    if not self.line_search:
                        raise
                    bad = True
                if not self.line_search or (not bad and np.linalg.norm(Rn) < rn) or lam < 2.0**-10:
                    break
                lam *= 0.5
            if bad:
                raise NewtonDivergenceError(self.step_index, float(rn), "residual became non-finite")
            x, R, scale = xn, Rn, sn
            if np.max(np.abs(lam * dx)) <= 1e-15 * (1.0 + np.max(np.abs(x))):
                return x, it
        if np.all(np.abs(R) <= self.rtol * scale + self.atol):
            return x, self.max_iter
        raise NewtonDivergenceError(self.step_index, float(np.linalg.norm(R)))


def _march(system, u, grid, x0, *, stride, rtol, atol, max_iter, line_search, on_store):
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    stepper = _Stepper(system, grid.dt, rtol, atol, max_iter, line_search)
    times = grid.times
    x = np.array(x0, dtype=float)
    iters = np.zeros(grid.steps, dtype=int)
    on_store(times[0], x)
    stored = [times[0]]
    for k in range(grid.steps):
        stepper.step_index = k + 1
        t = times[k + 1]
        x, iters[k] = stepper.solve(x, u(t), u.derivative(t) if stepper.rate is not None else None)
        if (k + 1) % stride == 0 or k + 1 == grid.steps:
            on_store(t, x)
            stored.append(t)
    return np.asarray(stored), iters


def implicit_euler(system, u, grid: TimeGrid, x0, *, stride=1, store_states=True,
                   rtol=1e-10, atol=0.0, max_iter=25, line_search=False):
    """Integrate ``system`` with implicit Euler and Newton."""
    outs, states = [], []

    def store(t, x):
        outs.append(np.asarray(system.output(x)).ravel())
        if store_states:
            states.append(x.copy())

    t0 = time.perf_counter()
    times, iters = _march(system, u, grid, x0, stride=stride, rtol=rtol, atol=atol,
                          max_iter=max_iter, line_search=line_search, on_store=store)
    wall = time.perf_counter() - t0
    return Trajectory(times, np.asarray(outs), np.asarray(states) if store_states else None,
                      None, wall, iters)


def simulate_decoupled(dec, u, grid: TimeGrid, xi_p0, *, algebraic="every_step", stride=1,
                       store_states=True, rtol=1e-10, atol=0.0, max_iter=25, line_search=False):
    """Implicit Euler on the differential part, then the algebraic solve.

    ``algebraic="every_step"`` solves for ``xi_q`` after every step;
    ``"output_times"`` only at stored times.  Outputs are identical.
    """
    if algebraic not in ("every_step", "output_times"):
        raise ValidationError("algebraic must be 'every_step' or 'output_times'")
    if stride < 1:
        raise ValidationError("stride must be >= 1")
    outs, xs, qs, kept = [], [], [], []
    counter = [0]

    def on_step(t, xi):
        k = counter[0]
        counter[0] += 1
        if k % stride == 0 or k == grid.steps:
            xq = dec.algebraic(xi, u(t))
            kept.append(t)
            outs.append(dec.output(xi, xq))
            if store_states:
                xs.append(xi.copy())
                qs.append(xq)
        elif algebraic == "every_step":
            dec.algebraic(xi, u(t))

    t0 = time.perf_counter()
    _, iters = _march(dec, u, grid, xi_p0, stride=1, rtol=rtol, atol=atol,
                      max_iter=max_iter, line_search=line_search, on_store=on_step)
    wall = time.perf_counter() - t0
    return Trajectory(np.asarray(kept), np.asarray(outs),
                      np.asarray(xs) if store_states else None,
                      np.asarray(qs) if store_states else None, wall, iters)


def steady_state(system, u_const, x_guess, *, rtol=1e-10, max_iter=50, line_search=True):
    """Solve ``0 = A x + F(x, u) + B u`` by Newton."""
    st = _Stepper(system, np.inf, rtol, 0.0, max_iter, line_search)
    x, _ = st.solve(np.asarray(x_guess, dtype=float), u_const, None, x_init=x_guess)
    return x
