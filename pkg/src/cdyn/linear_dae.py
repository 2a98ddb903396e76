"""Linear constant-coefficient DAEs ``E x' + H x = c(t)``.

Structural analysis (pencil regularity, differentiation index by a
shuffle-type rank reduction, hidden algebraic constraints) and closed-form
solution of the decoupled canonical form ``y' + C y = delta``,
``N z' + z = theta``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .errors import (AnalysisError, ContractError, DerivativeAvailabilityError,
                     ToleranceAmbiguityError)

# singular values within this factor of the tolerance are not trusted
AMBIGUITY_FACTOR = 100.0


@dataclass(frozen=True)
class SourceTerm:
    """Time-dependent right-hand side with derivatives.

    ``eval(t, order)`` returns the ``order``-th time derivative;
    orders above ``max_order`` are unavailable.
    """

    eval: Callable[[float, int], np.ndarray]
    max_order: int
    n: int

    def __call__(self, t, order=0):
        if order < 0 or order > self.max_order:
            raise DerivativeAvailabilityError(
                f"derivative of order {order} requested, source supplies up to {self.max_order}")
        return np.asarray(self.eval(t, order), dtype=float)

    @classmethod
    def constant(cls, value):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(lambda t, k: value.copy() if k == 0 else np.zeros_like(value),
                   max_order=10**6, n=value.size)

    @classmethod
    def polynomial(cls, coeffs):
        """Componentwise polynomials; ``coeffs[i][j]`` multiplies ``t**j`` (rows may differ in length)."""
        if np.isscalar(coeffs[0]):
            coeffs = [coeffs]
        polys = [np.polynomial.Polynomial(np.asarray(row, dtype=float)) for row in coeffs]

        def ev(t, k):
            return np.array([p.deriv(k)(t) if k else p(t) for p in polys])

        return cls(ev, max_order=10**6, n=len(polys))

    @classmethod
    def from_derivatives(cls, funcs: Sequence[Callable]):
        """``funcs[k](t)`` is the k-th derivative; max_order = len(funcs) - 1."""
        funcs = list(funcs)
        n = np.atleast_1d(funcs[0](0.0)).size
        return cls(lambda t, k: np.atleast_1d(funcs[k](t)), max_order=len(funcs) - 1, n=n)

    @classmethod
    def zero(cls, n):
        return cls.constant(np.zeros(n))


@dataclass(frozen=True)
class LinearDae:
    E: np.ndarray
    H: np.ndarray
    source: SourceTerm

    def __post_init__(self):
        E = np.atleast_2d(np.asarray(self.E, dtype=float))
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        if E.shape != H.shape or E.shape[0] != E.shape[1]:
            raise ContractError(f"E {E.shape} and H {H.shape} must be square and equal")
        if self.source.n != E.shape[0]:
            raise ContractError("source dimension does not match E")
        object.__setattr__(self, "E", E)
        object.__setattr__(self, "H", H)

    @property
    def n(self):
        return self.E.shape[0]

    def default_tol(self):
        return 1e-10 * max(np.linalg.norm(np.hstack([self.E, self.H]), 2), 1e-300)


@dataclass(frozen=True)
class CanonicalBlocks:
    """Weierstrass blocks: ODE part ``C`` (m x m) and nilpotent ``N``."""

    C: np.ndarray
    N: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float)) if np.size(self.C) else np.zeros((0, 0))
        N = np.atleast_2d(np.asarray(self.N, dtype=float)) if np.size(self.N) else np.zeros((0, 0))
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "N", N)
        nilpotency_degree(N)

    def as_dae(self, delta: SourceTerm, theta: SourceTerm) -> LinearDae:
        """Assemble ``E = diag(I, N)``, ``H = diag(C, I)`` with ``c = (delta, theta)``."""
        m, l = self.C.shape[0], self.N.shape[0]
        E = scipy.linalg.block_diag(np.eye(m), self.N)
        H = scipy.linalg.block_diag(self.C, np.eye(l))
        src = SourceTerm(lambda t, k: np.concatenate([delta(t, k), theta(t, k)]),
                         max_order=min(delta.max_order, theta.max_order), n=m + l)
        return LinearDae(E, H, src)


def nilpotency_degree(N, tol=1e-12) -> int:
    """Smallest k with ``N^k = 0`` (0 for an empty matrix)."""
    N = np.asarray(N, dtype=float)
    n = N.shape[0]
    if n == 0:
        return 0
    scale = max(1.0, np.abs(N).max())
    P = np.eye(n)
    for k in range(1, n + 1):
        P = P @ N
        if np.abs(P).max() <= tol * scale**k:
            return k
    raise ContractError("matrix is not nilpotent")


def pencil_is_regular(dae: LinearDae, tol=1e-10) -> bool:
    """Sample ``det(mu E + H)`` at mu = 1..2n+1."""
    for mu in range(1, 2 * dae.n + 2):
        s = np.linalg.svd(mu * dae.E + dae.H, compute_uv=False)
        if s[0] > 0.0 and s[-1] > tol * s[0]:
            return True
    return False


def _rank(s, tol):
    near = (s > tol / AMBIGUITY_FACTOR) & (s < tol * AMBIGUITY_FACTOR)
    if np.any(near):
        raise ToleranceAmbiguityError(
            f"singular value {s[near][0]:.3e} too close to rank tolerance {tol:.3e}")
    return int(np.sum(s > tol))


@dataclass
class ShuffleResult:
    """Outcome of the rank reduction.

    ``constraints`` lists ``(A, R)`` pairs: every consistent state satisfies
    ``A x = sum_j R[j] c^{(j)}(t)``.
    """

    index: int
    constraints: list
    E_final: np.ndarray
    H_final: np.ndarray


def shuffle(dae: LinearDae, tol=None) -> ShuffleResult:
    """Row-compress E, differentiate the algebraic rows, repeat until E is regular."""
    tol = dae.default_tol() if tol is None else tol
    n = dae.n
    E, H = dae.E.copy(), dae.H.copy()
    R = [np.eye(n)]
    constraints = []
    for sweep in range(n + 1):
        U, s, _ = np.linalg.svd(E)
        r = _rank(s, tol)
        if r == n:
            return ShuffleResult(sweep, constraints, E, H)
        T = U.T
        E, H = T @ E, T @ H
        R = [T @ Rj for Rj in R]
        H_alg = H[r:]
        if _rank(np.linalg.svd(H_alg, compute_uv=False), tol) < n - r:
            raise AnalysisError("algebraic rows are dependent: matrix pencil is singular")
        constraints.append((H_alg.copy(), [Rj[r:].copy() for Rj in R]))
        E = np.vstack([E[:r], H_alg])
        H = np.vstack([H[:r], np.zeros((n - r, n))])
        R_new = [np.vstack([Rj[:r], np.zeros((n - r, n))]) for Rj in R] + [np.zeros((n, n))]
        for j, Rj in enumerate(R):
            R_new[j + 1][r:] = Rj[r:]
        R = R_new
    raise AnalysisError("rank reduction did not terminate: matrix pencil is singular")


def differentiation_index(dae: LinearDae, tol=None) -> int:
    if not pencil_is_regular(dae):
        raise AnalysisError("matrix pencil is singular")
    return shuffle(dae, tol).index


def consistency_residual(dae: LinearDae, x0, t0, tol=None) -> float:
    """Max violation of all hidden algebraic constraints at ``(t0, x0)``."""
    res = shuffle(dae, tol)
    x0 = np.asarray(x0, dtype=float)
    worst = 0.0
    for A, R in res.constraints:
        rhs = sum(Rj @ dae.source(t0, j) for j, Rj in enumerate(R) if np.any(Rj))
        worst = max(worst, float(np.max(np.abs(A @ x0 - rhs))))
    return worst


def is_consistent(dae: LinearDae, x0, t0, tol=1e-8) -> bool:
    return consistency_residual(dae, x0, t0) <= tol


# --------------------------------------------------------------------------
# canonical-form solutions


def solve_nilpotent(N, theta: SourceTerm, t) -> np.ndarray:
    """``z = sum_{l<k} (-1)^l N^l theta^{(l)}(t)`` with k the nilpotency degree."""
    N = np.atleast_2d(np.asarray(N, dtype=float))
    k = nilpotency_degree(N)
    if theta.max_order < k - 1:
        raise DerivativeAvailabilityError(
            f"nilpotency degree {k} needs theta derivatives up to {k - 1}, "
            f"source supplies {theta.max_order}")
    z = np.zeros(N.shape[0])
    P = np.eye(N.shape[0])
    for ell in range(k):
        z += (-1) ** ell * (P @ theta(t, ell))
        P = P @ N
    return z


def _simpson_convolution(C, delta, a, b, rtol=1e-10, max_level=18):
    """``int_a^b expm(-C (b - s)) delta(s) ds`` by refined composite Simpson."""
    m = C.shape[0]
    prev = None
    n = 2
    for _ in range(max_level):
        h = (b - a) / n
        step = scipy.linalg.expm(-C * h)
        # nodes from b backwards so the propagator is a running power
        acc = np.zeros(m)
        prop = np.eye(m)
        for i in range(n + 1):
            s = b - i * h
            w = 1.0 if i in (0, n) else (4.0 if i % 2 else 2.0)
            acc += w * (prop @ delta(s, 0))
            prop = prop @ step
        val = acc * h / 3.0
        if prev is not None and np.abs(val - prev).max() <= rtol * np.abs(val).max():
            return val
        prev = val
        n *= 2
    raise AnalysisError("convolution quadrature did not converge")


def solve_decoupled(blocks: CanonicalBlocks, delta: SourceTerm, theta: SourceTerm,
                    y0, times):
    """Solve the decoupled system on ``times``; returns ``(Y, Z)`` row-stacked."""
    C, N = blocks.C, blocks.N
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (C.shape[0],):
        raise ContractError("y0 length does not match C")
    times = np.asarray(times, dtype=float)
    Y = np.empty((times.size, C.shape[0]))
    Z = np.empty((times.size, N.shape[0]))
    y = y0.copy()
    for i, t in enumerate(times):
        if i > 0 and C.shape[0]:
            a = times[i - 1]
            y = scipy.linalg.expm(-C * (t - a)) @ y + _simpson_convolution(C, delta, a, t)
        Y[i] = y
        Z[i] = solve_nilpotent(N, theta, t) if N.shape[0] else np.zeros(0)
    return Y, Z


def check_consistency(blocks: CanonicalBlocks, theta: SourceTerm, z0, t0, tol=1e-8) -> bool:
    z_star = solve_nilpotent(blocks.N, theta, t0)
    return bool(np.max(np.abs(np.asarray(z0, dtype=float) - z_star), initial=0.0) <= tol)
