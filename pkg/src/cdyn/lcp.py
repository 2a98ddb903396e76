"""Linear complementarity problems ``u = A p + b >= 0, p >= 0, p^T u = 0``.

Rows may be declared free (lower bound ``-inf``), in which case the row is
an equality ``u_i = 0`` with an unrestricted multiplier; this is how
bilateral constraints enter contact problems.

Iterative solvers (projected Gauss-Jacobi, projected Gauss-Seidel, PSOR and
an augmented-Lagrangian loop on velocities) run as numba kernels over CSR
storage. A brute-force enumeration over active sets serves as the oracle
for small problems.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional

import numba
import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import CapacityError, ContractError, InfeasibleError

ENUMERATION_LIMIT = 12
FIXED_POINT_TOL = 1e-12


@dataclass(frozen=True)
class ContactProblem:
    """``u = A p + b``; ``index_map[row]`` names the constraint behind each row.

    ``lower[row]`` is 0 for complementarity rows and ``-inf`` for free rows.
    """

    A: object
    b: np.ndarray
    index_map: np.ndarray = None
    lower: np.ndarray = None

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float).ravel()
        m = b.size
        A = self.A
        A = sp.csr_matrix(A, dtype=float) if sp.issparse(A) else np.asarray(A, dtype=float).reshape(m, m)
        if A.shape != (m, m):
            raise ContractError(f"A has shape {A.shape}, b has length {m}")
        lower = np.zeros(m) if self.lower is None else np.asarray(self.lower, dtype=float)
        if lower.shape != (m,) or np.any((lower != 0.0) & ~np.isneginf(lower)):
            raise ContractError("lower bounds must be 0 or -inf")
        idx = np.arange(m) if self.index_map is None else np.asarray(self.index_map, dtype=np.int64)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "index_map", idx)

    @property
    def m(self):
        return self.b.size

    def csr(self):
        A = self.A if sp.issparse(self.A) else sp.csr_matrix(self.A)
        A = A.tocsr()
        A.sort_indices()
        return A

    def dense(self):
        return self.A.toarray() if sp.issparse(self.A) else self.A

    def slack(self, p):
        return np.asarray(self.A @ p).ravel() + self.b


LcpProblem = ContactProblem


@dataclass(frozen=True)
class LcpSolverConfig:
    tol: float = 1e-10
    max_iter: int = 10000
    r: Optional[float] = None
    alpha: float = 1.0
    variant: str = "pgs"

    def __post_init__(self):
        if self.r is not None and not self.r > 0.0:
            raise ContractError("r must be positive")
        if not 0.0 < self.alpha < 2.0:
            raise ContractError("alpha must lie in (0, 2)")
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown solver variant {self.variant!r}")
        if not self.tol > 0.0 or self.max_iter < 1:
            raise ContractError("invalid tolerance or iteration cap")


VARIANTS = ("pgj", "pgs", "psor", "augmented_lagrangian")


@dataclass
class LcpSolution:
    p: np.ndarray
    u: np.ndarray
    iterations: int
    residual: float
    converged: bool
    natural_residual: float = 0.0
    active_set: tuple = field(default=())


def complementarity_residual(p, u, lower=None):
    """``max(|min(p,0)|, |min(u,0)|, |p^T u|)`` over bounded rows, ``|u|`` over free rows."""
    p = np.asarray(p, dtype=float)
    u = np.asarray(u, dtype=float)
    free = np.zeros(p.size, bool) if lower is None else np.isneginf(lower)
    if p.size == 0:
        return 0.0
    bp, bu = p[~free], u[~free]
    vals = [0.0]
    if bp.size:
        vals += [np.max(-np.minimum(bp, 0.0)), np.max(-np.minimum(bu, 0.0)), abs(float(bp @ bu))]
    if free.any():
        vals.append(np.max(np.abs(u[free])))
    return float(max(vals))


def natural_residual(p, u, r, lower=None):
    lower = np.zeros(np.size(p)) if lower is None else lower
    if np.size(p) == 0:
        return 0.0
    return float(np.max(np.abs(p - np.maximum(lower, p - r * u))))


def fixed_point_check(p, u, r) -> bool:
    """``p == proj_{R+}(p - r u)`` componentwise to 1e-12."""
    if not r > 0.0:
        raise ContractError("r must be positive")
    p = np.asarray(p, dtype=float)
    u = np.asarray(u, dtype=float)
    return bool(np.all(np.abs(p - np.maximum(0.0, p - r * u)) <= FIXED_POINT_TOL))


def default_r(A):
    """``1 / ||A||_inf``."""
    if sp.issparse(A):
        norm = float(np.max(np.abs(A).sum(axis=1))) if A.shape[0] else 0.0
    else:
        norm = float(np.max(np.sum(np.abs(A), axis=1))) if A.shape[0] else 0.0
    return 1.0 / norm if norm > 0.0 else 1.0


# --------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _matvec(indptr, indices, data, p, b, u):
    for i in range(b.size):
        s = b[i]
        for k in range(indptr[i], indptr[i + 1]):
            s += data[k] * p[indices[k]]
        u[i] = s


@numba.njit(cache=True)
def _residuals(p, u, lower, r):
    nat = 0.0
    comp = 0.0
    dot = 0.0
    for i in range(p.size):
        proj = p[i] - r * u[i]
        if proj < lower[i]:
            proj = lower[i]
        d = abs(p[i] - proj)
        if d > nat:
            nat = d
        if np.isinf(lower[i]):
            if abs(u[i]) > comp:
                comp = abs(u[i])
        else:
            if -p[i] > comp:
                comp = -p[i]
            if -u[i] > comp:
                comp = -u[i]
            dot += p[i] * u[i]
    if abs(dot) > comp:
        comp = abs(dot)
    return nat, comp


@numba.njit(cache=True)
def _pgj_kernel(indptr, indices, data, b, lower, p, r, tol, max_iter):
    m = b.size
    u = np.empty(m)
    for it in range(max_iter + 1):
        _matvec(indptr, indices, data, p, b, u)
        nat, comp = _residuals(p, u, lower, r)
        if nat <= tol and comp <= tol:
            return p, u, it, nat, comp, True
        if it == max_iter:
            break
        for i in range(m):
            v = p[i] - r * u[i]
            p[i] = v if v > lower[i] else lower[i]
    return p, u, max_iter, nat, comp, False


@numba.njit(cache=True)
def _gs_kernel(indptr, indices, data, b, lower, p, step, alpha, r, tol, max_iter):
    """Projected Gauss-Seidel sweeps with relaxation ``alpha``; ``step[i]`` is the
    per-row projection factor."""
    m = b.size
    u = np.empty(m)
    for it in range(max_iter + 1):
        _matvec(indptr, indices, data, p, b, u)
        nat, comp = _residuals(p, u, lower, r)
        if nat <= tol and comp <= tol:
            return p, u, it, nat, comp, True
        if it == max_iter:
            break
        for i in range(m):
            s = b[i]
            for k in range(indptr[i], indptr[i + 1]):
                s += data[k] * p[indices[k]]
            v = p[i] - step[i] * s
            if v < lower[i]:
                v = lower[i]
            p[i] = alpha * v + (1.0 - alpha) * p[i]
    return p, u, max_iter, nat, comp, False


# --------------------------------------------------------------------------
# solvers


def _prepare(problem, cfg, p0):
    A = problem.csr()
    r = cfg.r if cfg.r is not None else default_r(A)
    p = np.zeros(problem.m) if p0 is None else np.array(p0, dtype=float)
    if p.shape != (problem.m,):
        raise ContractError("warm start has the wrong length")
    p = np.maximum(p, problem.lower)
    return A, r, p


def _finish(p, u, it, nat, comp, conv, lower):
    return LcpSolution(p=p, u=u, iterations=int(it),
                       residual=complementarity_residual(p, u, lower),
                       converged=bool(conv), natural_residual=float(nat))


def _empty():
    return LcpSolution(np.zeros(0), np.zeros(0), 0, 0.0, True)


def pgj_solve(problem: ContactProblem, cfg: LcpSolverConfig = LcpSolverConfig(), p0=None):
    """``p <- proj(p - r (A p + b))`` with a global step ``r``."""
    if problem.m == 0:
        return _empty()
    A, r, p = _prepare(problem, cfg, p0)
    out = _pgj_kernel(A.indptr, A.indices, A.data, problem.b, problem.lower, p, r,
                      cfg.tol, cfg.max_iter)
    return _finish(*out, problem.lower)


def _gs_steps(A, r):
    d = A.diagonal()
    return np.where(d > 0.0, 1.0 / np.where(d > 0.0, d, 1.0), r)


def psor_solve(problem: ContactProblem, cfg: LcpSolverConfig = LcpSolverConfig(), p0=None):
    """Projected SOR: Gauss-Seidel row solves blended as ``alpha p~ + (1 - alpha) p``.

    Rows with ``A_ii <= 0`` fall back to the global step ``r``.
    """
    if problem.m == 0:
        return _empty()
    A, r, p = _prepare(problem, cfg, p0)
    out = _gs_kernel(A.indptr, A.indices, A.data, problem.b, problem.lower, p,
                     _gs_steps(A, r), cfg.alpha, r, cfg.tol, cfg.max_iter)
    return _finish(*out, problem.lower)


def pgs_solve(problem: ContactProblem, cfg: LcpSolverConfig = LcpSolverConfig(), p0=None):
    """Projected Gauss-Seidel: exact single-row solves with fresh components."""
    return psor_solve(problem, _with(cfg, alpha=1.0), p0)


def _with(cfg, **kw):
    from dataclasses import replace
    return replace(cfg, **kw)


@dataclass(frozen=True)
class StepContext:
    """Velocity-level view of one contact problem.

    ``velocity(p)`` maps impulses to the post-step velocity and
    ``contact_velocity(v)`` maps that velocity to the constraint rows ``u``.
    """

    velocity: Callable
    contact_velocity: Callable
    m: int
    lower: np.ndarray = None
    r: Optional[float] = None

    @classmethod
    def from_lcp(cls, A, b):
        """Realize ``u = A p + b`` as ``v = v0 + G^T p``, ``u = G v`` with ``G G^T = A``."""
        A = np.asarray(A, dtype=float)
        b = np.asarray(b, dtype=float)
        w, V = scipy.linalg.eigh(A)
        G = V * np.sqrt(np.maximum(w, 0.0))
        v0 = np.linalg.lstsq(G, b, rcond=None)[0]
        if np.abs(G @ v0 - b).max() > 1e-10 * max(1.0, np.abs(b).max()):
            raise ContractError("b is not in the range of A; no velocity realization")
        return cls(velocity=lambda p: v0 + G.T @ p, contact_velocity=lambda v: G @ v,
                   m=b.size, r=default_r(A))


def augmented_lagrangian_solve(ctx: StepContext, cfg: LcpSolverConfig = LcpSolverConfig(),
                               p0=None):
    """Fixed-point loop: velocity from impulses, contact velocity, projected update."""
    m = ctx.m
    if m == 0:
        return _empty()
    lower = np.zeros(m) if ctx.lower is None else ctx.lower
    r = cfg.r if cfg.r is not None else (ctx.r if ctx.r is not None else 1.0)
    p = np.zeros(m) if p0 is None else np.maximum(np.array(p0, dtype=float), lower)
    for it in range(cfg.max_iter + 1):
        u = np.asarray(ctx.contact_velocity(ctx.velocity(p)), dtype=float)
        nat = natural_residual(p, u, r, lower)
        comp = complementarity_residual(p, u, lower)
        if nat <= cfg.tol and comp <= cfg.tol:
            return LcpSolution(p, u, it, comp, True, nat)
        if it == cfg.max_iter:
            break
        p = np.maximum(lower, p - r * u)
    return LcpSolution(p, u, cfg.max_iter, comp, False, nat)


def enumerate_solve(problem: ContactProblem) -> LcpSolution:
    """Try every active set; keep the feasible one with the least ``p^T A p + p^T b``.

    Free rows always belong to the active set. Ties go to the lexicographically
    smallest active set.
    """
    m = problem.m
    if m > ENUMERATION_LIMIT:
        raise CapacityError(f"enumeration supports m <= {ENUMERATION_LIMIT}, got {m}")
    A, b = problem.dense(), problem.b
    free = np.isneginf(problem.lower)
    bounded = [i for i in range(m) if not free[i]]
    fixed = [i for i in range(m) if free[i]]
    scale = max(1.0, np.abs(A).max() if m else 0.0, np.abs(b).max() if m else 0.0)
    eps = 1e-10 * scale
    best = None
    for k in range(len(bounded) + 1):
        for combo in itertools.combinations(bounded, k):
            S = sorted(fixed + list(combo))
            p = np.zeros(m)
            if S:
                AS = A[np.ix_(S, S)]
                pS = np.linalg.lstsq(AS, -b[S], rcond=None)[0]
                if np.abs(AS @ pS + b[S]).max() > eps:
                    continue
                p[S] = pS
            u = A @ p + b
            u[S] = 0.0
            if np.any(p[list(combo)] < -eps) or np.any(np.delete(u, S) < -eps):
                continue
            p[list(combo)] = np.maximum(p[list(combo)], 0.0)
            obj = float(p @ (A @ p) + p @ b)
            key = (obj, tuple(S))
            if best is None or obj < best[0][0] - eps or (
                    abs(obj - best[0][0]) <= eps and tuple(S) < best[0][1]):
                best = (key, p, tuple(S))
    if best is None:
        raise InfeasibleError("no active set yields a feasible complementarity point")
    p = best[1]
    u = problem.slack(p)
    return LcpSolution(p, u, 0, complementarity_residual(p, u, problem.lower), True,
                       active_set=best[2])


SOLVERS = {"pgj": pgj_solve, "pgs": pgs_solve, "psor": psor_solve}


def solve(problem: ContactProblem, cfg: LcpSolverConfig, p0=None, context: StepContext = None):
    """Dispatch on ``cfg.variant``; the augmented-Lagrangian loop needs a context."""
    if cfg.variant == "augmented_lagrangian":
        if context is None:
            raise ContractError("augmented Lagrangian solve needs a velocity context")
        return augmented_lagrangian_solve(context, cfg, p0)
    return SOLVERS[cfg.variant](problem, cfg, p0)


def random_spd_problem(rng: np.random.Generator, m_max=8, shift=1.0):
    """``A = B^T B / m + shift I`` with standard normal ``B`` and ``b``; ``m`` uniform in 1..m_max."""
    m = int(rng.integers(1, m_max + 1))
    B = rng.standard_normal((m, m))
    A = B.T @ B / m + shift * np.eye(m)
    return ContactProblem(A, rng.standard_normal(m))
