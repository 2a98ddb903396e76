"""Mechanical system abstraction, states, trajectories and energy evaluations.

Conventions used throughout the package:

* ``G(q)`` is the constraint Jacobian with one *row* per constraint, so the
  velocity constraint reads ``G(q) v`` and reactions enter the dynamics as
  ``G(q).T @ lam``.
* Bilateral multipliers ``lam`` are forces, unilateral ``p`` are impulses.
* ``kappa(q, v)`` is the row-wise second directional derivative
  ``d/de [G(q + e v) v]`` at ``e = 0``, so that ``d^2/dt^2 g = G a + kappa``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import ContractError, RankDeficiencyError, UnsupportedOperationError

FEASIBILITY_TOL = 1e-8


def _empty_rows(n_q):
    return lambda q: np.zeros(0)


def _empty_jac(n_q):
    return lambda q: np.zeros((0, n_q))


@dataclass(frozen=True)
class MechanicalSystem:
    """Callbacks and dimensions of a constrained mechanical system.

    ``contact_candidates`` and ``unilateral_rows`` are optional hooks for
    systems with many unilateral constraints (granular media). When present,
    ``contact_candidates(q, margin)`` returns the ascending ids of all
    unilateral constraints whose gap may be below ``margin`` and
    ``unilateral_rows(q, ids)`` returns ``(gaps, jacobian_rows)`` for them,
    the Jacobian possibly as a scipy sparse matrix.
    """

    n_q: int
    mass: Callable
    force: Callable
    n_lambda: int = 0
    n_u: int = 0
    bilateral: Optional[Callable] = None
    bilateral_jacobian: Optional[Callable] = None
    curvature: Optional[Callable] = None
    unilateral: Optional[Callable] = None
    unilateral_jacobian: Optional[Callable] = None
    potential: Optional[Callable] = None
    contact_candidates: Optional[Callable] = None
    unilateral_rows: Optional[Callable] = None
    feasibility_tol: float = FEASIBILITY_TOL
    name: str = "system"

    def __post_init__(self):
        if self.n_q <= 0:
            raise ContractError("n_q must be positive")
        if self.n_lambda < 0 or self.n_u < 0:
            raise ContractError("constraint counts must be non-negative")
        if self.n_lambda >= self.n_q:
            raise ContractError(
                f"n_lambda={self.n_lambda} must be smaller than n_q={self.n_q}")
        if self.n_lambda > 0 and None in (self.bilateral, self.bilateral_jacobian,
                                         self.curvature):
            raise ContractError("bilateral constraints need g, G and kappa callbacks")
        if self.n_u > 0 and self.contact_candidates is None and None in (
                self.unilateral, self.unilateral_jacobian):
            raise ContractError("unilateral constraints need g_u and G_u callbacks")
        # fill neutral callbacks so integrators never branch on None
        if self.n_lambda == 0:
            object.__setattr__(self, "bilateral", _empty_rows(self.n_q))
            object.__setattr__(self, "bilateral_jacobian", _empty_jac(self.n_q))
            object.__setattr__(self, "curvature", lambda q, v: np.zeros(0))
        if self.n_u == 0:
            object.__setattr__(self, "unilateral", _empty_rows(self.n_q))
            object.__setattr__(self, "unilateral_jacobian", _empty_jac(self.n_q))

    def gap_rows(self, q, ids):
        """Gaps and Jacobian rows of the unilateral constraints ``ids``."""
        ids = np.asarray(ids, dtype=np.int64)
        if self.unilateral_rows is not None:
            return self.unilateral_rows(q, ids)
        g = np.asarray(self.unilateral(q), dtype=float)
        G = self.unilateral_jacobian(q)
        if sp.issparse(G):
            G = G.toarray()
        return g[ids], np.asarray(G, dtype=float)[ids]

    def candidates(self, q, margin=np.inf):
        """Ids of unilateral constraints with gap possibly below ``margin``."""
        if self.n_u == 0:
            return np.zeros(0, dtype=np.int64)
        if self.contact_candidates is not None:
            return np.asarray(self.contact_candidates(q, margin), dtype=np.int64)
        ids = np.arange(self.n_u, dtype=np.int64)
        if np.isinf(margin):
            return ids
        return ids[np.asarray(self.unilateral(q)) <= margin]


@dataclass(frozen=True)
class SystemState:
    """Time, coordinates, velocities and the last reaction estimates."""

    t: float
    q: np.ndarray
    v: np.ndarray
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    p: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0))
    info: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, sys: MechanicalSystem, q, v, t=0.0):
        q = np.array(q, dtype=float)
        v = np.array(v, dtype=float)
        state = cls(t=float(t), q=q, v=v, lam=np.zeros(sys.n_lambda),
                    p=np.zeros(sys.n_u), mu=np.zeros(sys.n_lambda))
        check_state(sys, state)
        return state

    def evolve(self, **changes):
        return replace(self, **changes)


def check_state(sys: MechanicalSystem, state: SystemState):
    if state.q.shape != (sys.n_q,) or state.v.shape != (sys.n_q,):
        raise ContractError(
            f"state has q{state.q.shape}, v{state.v.shape}; expected ({sys.n_q},)")
    if state.lam.shape != (sys.n_lambda,):
        raise ContractError("lambda length does not match n_lambda")
    if state.p.shape != (sys.n_u,):
        raise ContractError("impulse length does not match n_u")


def _check_qv(sys, q, v):
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    if q.shape != (sys.n_q,) or v.shape != (sys.n_q,):
        raise ContractError(f"expected vectors of length {sys.n_q}, got {q.shape}, {v.shape}")
    return q, v


def kinetic_energy(sys: MechanicalSystem, q, v) -> float:
    q, v = _check_qv(sys, q, v)
    M = sys.mass(q)
    return 0.5 * float(v @ (M @ v))


def total_energy(sys: MechanicalSystem, q, v) -> float:
    if sys.potential is None:
        raise UnsupportedOperationError(f"{sys.name} has no potential")
    return kinetic_energy(sys, q, v) + float(sys.potential(np.asarray(q, dtype=float)))


def constraint_residuals(sys: MechanicalSystem, q, v):
    """Return ``(g(q), G(q) v, g_u(q))``."""
    q, v = _check_qv(sys, q, v)
    g = np.asarray(sys.bilateral(q), dtype=float)
    Gv = np.asarray(sys.bilateral_jacobian(q), dtype=float) @ v
    gu = np.asarray(sys.unilateral(q), dtype=float) if sys.n_u else np.zeros(0)
    return g, Gv, gu


def is_feasible(sys: MechanicalSystem, q, tol=None) -> bool:
    tol = sys.feasibility_tol if tol is None else tol
    g = np.asarray(sys.bilateral(np.asarray(q, dtype=float)))
    return g.size == 0 or float(np.max(np.abs(g))) <= tol


# --------------------------------------------------------------------------
# linear algebra shared by the integrators


class MassSolver:
    """Applies ``M^{-1}`` for a fixed mass matrix (diagonal fast path)."""

    def __init__(self, M):
        if sp.issparse(M):
            d = M.diagonal().astype(float)
            if (M - sp.diags(d)).count_nonzero() == 0:
                self._set_diagonal(d)
                self.M = M
                return
            M = M.toarray()
        M = np.asarray(M, dtype=float)
        d = np.diagonal(M).copy()
        self.diagonal = not np.any(M - np.diag(d))
        if self.diagonal:
            if np.any(d <= 0.0):
                raise RankDeficiencyError("mass matrix has a non-positive diagonal entry")
            self._inv = 1.0 / d
        else:
            try:
                self._cho = scipy.linalg.cho_factor(M)
            except np.linalg.LinAlgError as exc:
                raise RankDeficiencyError("mass matrix is not positive definite") from exc
        self.M = M

    def _set_diagonal(self, d):
        if np.any(d <= 0.0):
            raise RankDeficiencyError("mass matrix has a non-positive diagonal entry")
        self.diagonal = True
        self._inv = 1.0 / d

    def solve(self, rhs):
        """``M^{-1} rhs`` for a vector or a (n_q, k) dense/sparse block."""
        if self.diagonal:
            if sp.issparse(rhs):
                return sp.diags(self._inv) @ rhs
            rhs = np.asarray(rhs, dtype=float)
            return rhs * (self._inv if rhs.ndim == 1 else self._inv[:, None])
        if sp.issparse(rhs):
            rhs = rhs.toarray()
        return scipy.linalg.cho_solve(self._cho, rhs)


def solve_saddle(M, G_top, G_bottom, a, b, cond_max=1e13):
    """Solve ``[[M, G_top^T], [G_bottom, 0]] [x; y] = [a; b]``.

    ``M`` must be SPD. The Schur complement ``G_bottom M^{-1} G_top^T`` is
    solved directly; a condition number above ``cond_max`` is reported as
    rank deficiency.
    """
    ms = M if isinstance(M, MassSolver) else MassSolver(M)
    a = np.asarray(a, dtype=float)
    if G_top.shape[0] == 0:
        return ms.solve(a), np.zeros(0)
    Minv_a = ms.solve(a)
    Minv_Gt = ms.solve(np.asarray(G_top, dtype=float).T)
    S = G_bottom @ Minv_Gt
    if S.shape[0] == 1:
        if not abs(S[0, 0]) > 1.0 / cond_max * max(1.0, np.abs(G_bottom).max() * np.abs(Minv_Gt).max()):
            raise RankDeficiencyError("saddle matrix is singular (zero Schur complement)")
    elif np.linalg.cond(S) > cond_max:
        raise RankDeficiencyError("saddle matrix is numerically singular")
    y = np.linalg.solve(S, G_bottom @ Minv_a - b)
    x = Minv_a - Minv_Gt @ y
    return x, y


def saddle_matrix(M, G):
    """Assemble the symmetric saddle-point matrix ``[[M, G^T], [G, 0]]``."""
    n_lam = G.shape[0]
    return np.block([[M, G.T], [G, np.zeros((n_lam, n_lam))]])


def check_mass_matrix(M, rtol=1e-12) -> bool:
    """True when ``M`` is symmetric (to ``rtol * ||M||``) and positive definite."""
    M = np.asarray(M, dtype=float)
    if np.abs(M - M.T).max() > rtol * max(np.abs(M).max(), 1.0):
        return False
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return bool(np.min(np.diag(L)) > 0.0)


# --------------------------------------------------------------------------
# finite-difference cross checks of user callbacks


def fd_jacobian(fun, x, eps=1e-6):
    """Central finite-difference Jacobian of ``fun`` at ``x``."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(fun(x), dtype=float)
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = eps * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * h)
    return J


def fd_curvature(jac, q, v, eps=1e-6):
    """Row-wise second directional derivative ``d/de [G(q + e v) v]``."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    h = eps * max(1.0, float(np.linalg.norm(q)))
    Gp = _dense(jac(q + h * v))
    Gm = _dense(jac(q - h * v))
    return (Gp @ v - Gm @ v) / (2.0 * h)


def _dense(A):
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


def _rel_err(a, b):
    scale = max(np.abs(b).max() if np.size(b) else 0.0, 1e-12)
    return float(np.abs(a - b).max() / scale) if np.size(a) else 0.0


def jacobian_errors(sys: MechanicalSystem, q, v) -> dict:
    """Relative deviations of G, G_u and kappa from finite differences."""
    errs = {}
    if sys.n_lambda:
        errs["G"] = _rel_err(_dense(sys.bilateral_jacobian(q)), fd_jacobian(sys.bilateral, q))
        errs["kappa"] = _rel_err(np.asarray(sys.curvature(q, v)),
                                 fd_curvature(sys.bilateral_jacobian, q, v))
    if sys.n_u:
        errs["G_u"] = _rel_err(_dense(sys.unilateral_jacobian(q)), fd_jacobian(sys.unilateral, q))
    return errs


# --------------------------------------------------------------------------
# trajectories

CSV_DIAGNOSTICS = ("g_inf", "gv_inf", "min_gap", "e_kin", "e_tot", "iters", "comp_res")


def state_diagnostics(sys: MechanicalSystem, state: SystemState) -> dict:
    """Constraint residuals, energies and solver info for one state."""
    q, v = state.q, state.v
    g = np.asarray(sys.bilateral(q))
    Gv = _dense(sys.bilateral_jacobian(q)) @ v if sys.n_lambda else np.zeros(0)
    if "min_gap" in state.info:
        min_gap = state.info["min_gap"]
    elif sys.n_u and sys.contact_candidates is None:
        min_gap = float(np.min(sys.unilateral(q)))
    else:
        min_gap = np.inf
    e_kin = kinetic_energy(sys, q, v)
    e_tot = e_kin + float(sys.potential(q)) if sys.potential is not None else np.nan
    return {
        "g_inf": float(np.max(np.abs(g))) if g.size else 0.0,
        "gv_inf": float(np.max(np.abs(Gv))) if Gv.size else 0.0,
        "min_gap": float(min_gap),
        "e_kin": e_kin,
        "e_tot": e_tot,
        "iters": int(state.info.get("iterations", 0)),
        "comp_res": float(state.info.get("comp_res", 0.0)),
        "impulse": float(np.sum(state.p)),
    }


@dataclass
class Trajectory:
    """Sampled states with per-sample diagnostics.

    ``series`` holds per-step observer outputs (one entry per step,
    including the initial state), independent of the sampling stride.
    """

    times: np.ndarray
    states: list
    diagnostics: dict
    series: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.states)

    @property
    def q(self):
        return np.array([s.q for s in self.states])

    @property
    def v(self):
        return np.array([s.v for s in self.states])

    @property
    def lam(self):
        return np.array([s.lam for s in self.states])

    @property
    def final(self) -> SystemState:
        return self.states[-1]


class TrajectoryRecorder:
    """Accumulates states every ``stride`` steps plus per-step observers."""

    def __init__(self, sys, stride=1, observers=None):
        if stride < 1:
            raise ContractError("stride must be >= 1")
        self.sys = sys
        self.stride = stride
        self.observers = dict(observers or {})
        self.times = []
        self.states = []
        self.rows = {k: [] for k in CSV_DIAGNOSTICS + ("impulse",)}
        self.series = {k: [] for k in self.observers}
        self._count = 0

    def record(self, state, force=False):
        for name, obs in self.observers.items():
            self.series[name].append(obs(self.sys, state))
        if force or self._count % self.stride == 0:
            self._sample(state)
        self._count += 1

    def _sample(self, state):
        if self.times and self.times[-1] == state.t:
            return
        self.times.append(state.t)
        self.states.append(state)
        for k, val in state_diagnostics(self.sys, state).items():
            self.rows[k].append(val)

    def finish(self, final_state) -> Trajectory:
        self._sample(final_state)
        return Trajectory(
            times=np.array(self.times),
            states=self.states,
            diagnostics={k: np.array(v) for k, v in self.rows.items()},
            series={k: np.array(v) for k, v in self.series.items()},
        )
