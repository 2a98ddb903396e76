"""Moreau-Jean time stepping for systems with unilateral contacts.

One step with force impulse ``k = h f(q_k, v_k, t_k)`` and ``M, G`` frozen
at ``q_k``::

    M (v1 - v) = k + G^T p
    q1 = q + h (theta v1 + (1 - theta) v)

The contact impulses ``p`` solve an LCP on the contact rows ``u``:

* linearized mode: ``u = g/h + G (theta v1 + (1 - theta) v)`` for every
  contact candidate, which also pushes initial violations out;
* active-set mode: ``u = G v1`` for contacts with ``g <= activation_tol``.

Newton restitution adds ``e * min(G v, 0)`` to contact rows. Bilateral
constraints, if any, are appended as free rows of the same problem; their
multipliers are reported as forces ``lam = -p / h``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .core import MassSolver, MechanicalSystem, SystemState, TrajectoryRecorder, kinetic_energy
from .errors import ContractError, StepFailure
from .lcp import ContactProblem, LcpSolverConfig, StepContext, default_r, solve

log = logging.getLogger(__name__)

MODES = ("linearized", "active_set")


@dataclass(frozen=True)
class LinearForce:
    """``f = f_ext(t) - K q - D v``, integrated with theta weighting."""

    K: np.ndarray
    D: np.ndarray
    f_ext: object = None


@dataclass(frozen=True)
class NonsmoothConfig:
    h: float
    theta: float = 1.0
    constraint_mode: str = "linearized"
    activation_tol: float = 0.0
    restitution: object = 0.0
    solver: LcpSolverConfig = field(default_factory=LcpSolverConfig)
    contact_margin: float = np.inf
    linear_force: Optional[LinearForce] = None
    warm_start: bool = True

    def __post_init__(self):
        if not self.h > 0.0:
            raise ContractError("h must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ContractError("theta must lie in [0, 1]")
        if self.constraint_mode not in MODES:
            raise ContractError(f"constraint_mode must be one of {MODES}")
        if self.constraint_mode == "linearized" and self.theta == 0.0:
            raise ContractError("linearized constraints need theta > 0")
        e = np.asarray(self.restitution, dtype=float)
        if np.any(e < 0.0) or np.any(e > 1.0):
            raise ContractError("restitution must lie in [0, 1]")
        if self.contact_margin < self.activation_tol:
            raise ContractError("contact_margin must cover activation_tol")


def active_set(sys: MechanicalSystem, q, tol=0.0):
    """Ascending ids of unilateral constraints with ``g_u <= tol``."""
    ids = sys.candidates(np.asarray(q, dtype=float), tol)
    if ids.size == 0:
        return ids
    gaps, _ = sys.gap_rows(q, ids)
    return ids[gaps <= tol]


def _candidate_rows(sys, q, margin):
    ids = sys.candidates(q, margin)
    if ids.size == 0:
        return ids, np.zeros(0), sp.csr_matrix((0, sys.n_q))
    gaps, G = sys.gap_rows(q, ids)
    keep = gaps <= margin
    G = sp.csr_matrix(G)
    return ids[keep], np.asarray(gaps)[keep], G[keep]


@dataclass
class _StepData:
    """Everything the contact solve of one step depends on."""

    problem: ContactProblem
    context: StepContext
    v_free: np.ndarray
    mass: MassSolver
    G: sp.csr_matrix
    n_unilateral: int


def _restitution(cfg, ids):
    e = np.asarray(cfg.restitution, dtype=float)
    return np.full(ids.size, float(e)) if e.ndim == 0 else e[ids]


def _prepare(sys: MechanicalSystem, state: SystemState, cfg: NonsmoothConfig, cand):
    q, v, t, h, th = state.q, state.v, state.t, cfg.h, cfg.theta
    M = sys.mass(q)
    if cfg.linear_force is None:
        Ms = MassSolver(M)
        v_free = v + Ms.solve(h * np.asarray(sys.force(q, v, t), dtype=float))
    else:
        lf = cfg.linear_force
        K, D = np.asarray(lf.K, dtype=float), np.asarray(lf.D, dtype=float)
        Md = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
        f_ext = np.zeros(sys.n_q) if lf.f_ext is None else np.asarray(lf.f_ext(t), dtype=float)
        Ms = MassSolver(Md + h * th * D + h * h * th * th * K)
        rhs = Md @ v + h * f_ext - h * K @ q - (h * D + h * h * th * K) @ ((1 - th) * v)
        v_free = Ms.solve(rhs)

    ids, gaps, Gu = cand
    if cfg.constraint_mode == "active_set":
        sel = gaps <= cfg.activation_tol
        ids, gaps, Gu = ids[sel], gaps[sel], Gu[sel]
    nb = sys.n_lambda
    Gb = sp.csr_matrix(np.asarray(sys.bilateral_jacobian(q), dtype=float).reshape(nb, sys.n_q))
    G = sp.vstack([Gu, Gb], format="csr")
    m = G.shape[0]
    lower = np.concatenate([np.zeros(ids.size), np.full(nb, -np.inf)])
    index_map = np.concatenate([ids, sys.n_u + np.arange(nb)]).astype(np.int64)

    MinvGt = Ms.solve(G.T.tocsc() if Ms.diagonal else G.T.toarray())
    W = G @ MinvGt
    W = sp.csr_matrix(W)
    Gv = G @ v
    bounce = np.zeros(m)
    bounce[:ids.size] = _restitution(cfg, ids) * np.minimum(Gv[:ids.size], 0.0)
    if cfg.constraint_mode == "linearized":
        g_all = np.concatenate([gaps, np.asarray(sys.bilateral(q), dtype=float)])
        offset = g_all / h + (1.0 - th) * Gv + bounce
        A = th * W
        b = offset + th * (G @ v_free)

        def contact_velocity(v1):
            return offset + th * (G @ v1)
    else:
        A = W
        b = G @ v_free + bounce

        def contact_velocity(v1):
            return G @ v1 + bounce
    A = sp.csr_matrix(A)
    A.sort_indices()
    problem = ContactProblem(A, b, index_map, lower)
    MinvGt_dense = MinvGt

    def velocity(p):
        return v_free + np.asarray(MinvGt_dense @ p).ravel()

    context = StepContext(velocity=velocity, contact_velocity=contact_velocity, m=m,
                          lower=lower, r=default_r(A) if m else 1.0)
    return _StepData(problem, context, v_free, Ms, G, ids.size)


def assemble_contact_problem(sys: MechanicalSystem, state: SystemState,
                             cfg: NonsmoothConfig) -> ContactProblem:
    """Delassus matrix and free velocity term of the current step."""
    cand = _candidate_rows(sys, state.q, cfg.contact_margin)
    return _prepare(sys, state, cfg, cand).problem


def _warm_start(state, problem):
    ids, p = state.info.get("_rows", (None, None))
    if ids is None or ids.size == 0 or problem.m == 0:
        return None
    pos = np.searchsorted(ids, problem.index_map)
    pos = np.minimum(pos, ids.size - 1)
    hit = ids[pos] == problem.index_map
    p0 = np.zeros(problem.m)
    p0[hit] = p[pos[hit]]
    return p0


def moreau_jean_step(sys: MechanicalSystem, state: SystemState,
                     cfg: NonsmoothConfig) -> SystemState:
    """Advance one step; raises :class:`StepFailure` if the LCP solve fails."""
    margin = cfg.contact_margin
    cand = state.info.get("_cand")
    if cand is None or state.info.get("_margin") != margin:
        cand = _candidate_rows(sys, state.q, margin)
    data = _prepare(sys, state, cfg, cand)
    problem = data.problem
    p0 = _warm_start(state, problem) if cfg.warm_start else None
    sol = solve(problem, cfg.solver, p0=p0, context=data.context)
    if not sol.converged:
        raise StepFailure(
            f"contact solve did not converge at t={state.t:.6g} "
            f"(residual {sol.residual:.3e}, natural {sol.natural_residual:.3e}, "
            f"{sol.iterations} iterations, {problem.m} rows)",
            residual=max(sol.residual, sol.natural_residual))
    h, th = cfg.h, cfg.theta
    v1 = data.context.velocity(sol.p)
    q1 = state.q + h * (th * v1 + (1.0 - th) * state.v)

    nu = data.n_unilateral
    p_full = np.zeros(sys.n_u)
    ids = problem.index_map[:nu]
    p_full[ids] = sol.p[:nu]
    lam = -sol.p[nu:] / h  # same sign as M a = f - G^T lam

    next_cand = _candidate_rows(sys, q1, margin)
    min_gap = float(np.min(next_cand[1])) if next_cand[1].size else np.inf
    info = {
        "iterations": sol.iterations,
        "comp_res": sol.residual,
        "min_gap": min_gap,
        "n_rows": problem.m,
        "_cand": next_cand,
        "_margin": margin,
        "_rows": (problem.index_map.copy(), sol.p.copy()),
    }
    return SystemState(t=state.t + h, q=q1, v=v1, lam=lam, p=p_full,
                       mu=np.zeros(sys.n_lambda), info=info)


def _kinetic(sys, state):
    return kinetic_energy(sys, state.q, state.v)


def _min_gap(sys, state):
    return state.info.get("min_gap", np.inf)


def _impulse(sys, state):
    return float(np.sum(state.p))


DEFAULT_OBSERVERS = {"e_kin": _kinetic, "min_gap": _min_gap, "impulse": _impulse}


def simulate(sys: MechanicalSystem, state0: SystemState, cfg: NonsmoothConfig, t_end,
             observers=None, stride=1):
    """Iterate :func:`moreau_jean_step` on the grid ``t0 + k h`` up to ``t_end``."""
    if not t_end > state0.t:
        raise ContractError("t_end must exceed the initial time")
    n_steps = int(round((t_end - state0.t) / cfg.h))
    obs = dict(DEFAULT_OBSERVERS)
    obs.update(observers or {})
    rec = TrajectoryRecorder(sys, stride, obs)
    cand = _candidate_rows(sys, state0.q, cfg.contact_margin)
    min_gap = float(np.min(cand[1])) if cand[1].size else np.inf
    state = state0.evolve(info={**state0.info, "_cand": cand, "_margin": cfg.contact_margin,
                                "min_gap": min_gap})
    rec.record(state)
    for k in range(1, n_steps + 1):
        try:
            state = moreau_jean_step(sys, state, cfg)
        except StepFailure as exc:
            exc.step = k
            log.error("step %d failed: %s", k, exc)
            raise
        state = state.evolve(t=state0.t + k * cfg.h)
        rec.record(state)
    return rec.finish(state)
