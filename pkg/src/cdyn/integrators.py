"""Time discretizations for smooth constrained systems.

BDF for fully implicit DAEs ``F(x', x, t) = 0`` and one-step schemes for the
Euler-Lagrange equations ``M q'' = f - G^T lam, g(q) = 0``: acceleration-level
(index 1 after two differentiations), Baumgarte, GGL, half-explicit Euler
with projections and SHAKE.

Steppers map a :class:`~cdyn.core.SystemState` to the next one. All of them
accept an optional :class:`ConstraintDrive`, which replaces the right-hand
sides of the position/velocity/acceleration constraint rows by prescribed
functions of time (rheonomic constraints, or defects for perturbation
experiments).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import (MassSolver, MechanicalSystem, SystemState, TrajectoryRecorder,
                   _dense, fd_jacobian, solve_saddle)
from .errors import ContractError, ProjectionFailure, RankDeficiencyError, StepFailure

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class IntegratorConfig:
    tau: float
    newton_tol: float = 1e-10
    newton_max_iter: int = 30
    theta: float = 1.0
    baumgarte_alpha: float = 5.0
    baumgarte_beta: float = 5.0

    def __post_init__(self):
        if not self.tau > 0.0:
            raise ContractError("tau must be positive")
        if not 0.0 <= self.theta <= 1.0:
            raise ContractError("theta must lie in [0, 1]")
        if self.baumgarte_alpha < 0.0 or self.baumgarte_beta < 0.0:
            raise ContractError("Baumgarte gains must be non-negative")
        if self.newton_tol <= 0.0 or self.newton_max_iter < 1:
            raise ContractError("invalid Newton settings")


@dataclass(frozen=True)
class ConstraintDrive:
    """Right-hand sides of the constraint rows as functions of time.

    ``position(t)`` replaces 0 in ``g(q) = 0``, ``velocity(t)`` in
    ``G v = 0`` and ``acceleration(t)`` in ``G a + kappa = 0``. Unset levels
    stay zero.
    """

    position: Optional[Callable] = None
    velocity: Optional[Callable] = None
    acceleration: Optional[Callable] = None

    def at(self, level, t, n):
        fun = getattr(self, level)
        return np.zeros(n) if fun is None else np.atleast_1d(np.asarray(fun(t), dtype=float))


_NO_DRIVE = ConstraintDrive()


def _G(sys, q):
    return _dense(sys.bilateral_jacobian(q))


# --------------------------------------------------------------------------
# BDF for fully implicit systems


@dataclass(frozen=True)
class ImplicitDae:
    """``residual(xdot, x, t) = 0`` with optional analytic Jacobians."""

    residual: Callable
    n: int
    jac_xdot: Optional[Callable] = None
    jac_x: Optional[Callable] = None

    @classmethod
    def from_linear(cls, dae):
        E, H, c = dae.E, dae.H, dae.source
        return cls(lambda xd, x, t: E @ xd + H @ x - c(t),
                   dae.n,
                   jac_xdot=lambda xd, x, t: E,
                   jac_x=lambda xd, x, t: H)

    def jacobians(self, xd, x, t):
        if self.jac_xdot is not None:
            Jd = np.asarray(self.jac_xdot(xd, x, t), dtype=float)
        else:
            Jd = fd_jacobian(lambda y: self.residual(y, x, t), xd)
        if self.jac_x is not None:
            Jx = np.asarray(self.jac_x(xd, x, t), dtype=float)
        else:
            Jx = fd_jacobian(lambda y: self.residual(xd, y, t), x)
        return Jd, Jx


BDF_COEFFS = {
    1: np.array([-1.0, 1.0]),
    2: np.array([0.5, -2.0, 1.5]),
}


def bdf_step(dae: ImplicitDae, history, k, t_next, cfg: IntegratorConfig):
    """Solve ``F(rho x / tau, x, t_next) = 0`` for the new value by damped Newton.

    ``history`` holds the last ``k`` values, oldest first.
    """
    if k not in BDF_COEFFS:
        raise ContractError("only BDF-1 and BDF-2 are supported")
    if len(history) != k:
        raise ContractError(f"BDF-{k} needs {k} history values")
    alpha = BDF_COEFFS[k]
    tau = cfg.tau
    known = sum(a * np.asarray(x, dtype=float) for a, x in zip(alpha[:-1], history))
    x = np.array(history[-1], dtype=float)

    def xdot(y):
        return (known + alpha[-1] * y) / tau

    F = np.asarray(dae.residual(xdot(x), x, t_next), dtype=float)
    res = np.abs(F).max()
    for _ in range(cfg.newton_max_iter):
        if res <= cfg.newton_tol:
            return x
        Jd, Jx = dae.jacobians(xdot(x), x, t_next)
        J = alpha[-1] / tau * Jd + Jx
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise StepFailure("singular BDF iteration matrix", residual=res) from exc
        lam = 1.0
        while True:
            x_try = x + lam * dx
            F_try = np.asarray(dae.residual(xdot(x_try), x_try, t_next), dtype=float)
            res_try = np.abs(F_try).max()
            if res_try < res or lam < 1e-4:
                break
            lam *= 0.5
        x, F, res = x_try, F_try, res_try
    if res <= cfg.newton_tol:
        return x
    raise StepFailure(f"BDF Newton did not converge (|F| = {res:.3e})", residual=res)


def integrate_bdf(dae: ImplicitDae, x0, t0, t_end, k, cfg: IntegratorConfig):
    """Fixed-step BDF-k from consistent ``x0``; BDF-1 bootstraps the first step."""
    n_steps = int(round((t_end - t0) / cfg.tau))
    times = t0 + cfg.tau * np.arange(n_steps + 1)
    X = np.empty((n_steps + 1, dae.n))
    X[0] = x0
    for i in range(1, n_steps + 1):
        order = min(k, i)
        try:
            X[i] = bdf_step(dae, list(X[i - order:i]), order, times[i], cfg)
        except StepFailure as exc:
            exc.step = i
            raise
    return times, X


# --------------------------------------------------------------------------
# Euler-Lagrange steppers


def _acceleration_solve(sys, state, cfg, drive, stabilize):
    q, v, t = state.q, state.v, state.t
    M = MassSolver(sys.mass(q))
    G = _G(sys, q)
    f = np.asarray(sys.force(q, v, t), dtype=float)
    n = sys.n_lambda
    rhs = -np.asarray(sys.curvature(q, v), dtype=float) + drive.at("acceleration", t, n)
    if stabilize:
        a, b = cfg.baumgarte_alpha, cfg.baumgarte_beta
        rhs -= 2.0 * a * (G @ v - drive.at("velocity", t, n))
        rhs -= b * b * (np.asarray(sys.bilateral(q)) - drive.at("position", t, n))
    acc, lam = solve_saddle(M, G, G, f, rhs)
    v1 = v + cfg.tau * acc
    q1 = q + cfg.tau * v1
    return state.evolve(t=t + cfg.tau, q=q1, v=v1, lam=lam)


def acceleration_level_step(sys: MechanicalSystem, state: SystemState,
                            cfg: IntegratorConfig, drive: ConstraintDrive = _NO_DRIVE):
    """Saddle solve for ``(q'', lam)`` then semi-implicit Euler."""
    return _acceleration_solve(sys, state, cfg, drive, stabilize=False)


def baumgarte_step(sys: MechanicalSystem, state: SystemState, cfg: IntegratorConfig,
                   drive: ConstraintDrive = _NO_DRIVE):
    """As :func:`acceleration_level_step` with ``-2 alpha G v - beta^2 g`` added."""
    return _acceleration_solve(sys, state, cfg, drive, stabilize=True)


def ggl_step(sys: MechanicalSystem, state: SystemState, cfg: IntegratorConfig,
             drive: ConstraintDrive = _NO_DRIVE):
    """Implicit Euler on the GGL system, unknowns ``(q1, v1, lam, mu)``.

    Residuals::

        q1 - q - tau (v1 - G(q1)^T mu)
        M (v1 - v) - tau f(q1, v1, t1) + tau G(q1)^T lam
        G(q1) v1
        g(q1)

    Newton with G-dependent terms differentiated numerically every
    iteration; the force derivative is frozen at the step start and the
    mass matrix is frozen at ``q``.
    """
    nq, nl = sys.n_q, sys.n_lambda
    tau = cfg.tau
    q, v, t = state.q, state.v, state.t
    t1 = t + tau
    M = np.asarray(_dense(sys.mass(q)), dtype=float)
    Kq = fd_jacobian(lambda y: sys.force(y, v, t1), q)
    Kv = fd_jacobian(lambda y: sys.force(q, y, t1), v)
    d_pos = drive.at("position", t1, nl)
    d_vel = drive.at("velocity", t1, nl)

    x = np.concatenate([q + tau * v, v, state.lam if state.lam.size == nl else np.zeros(nl),
                        np.zeros(nl)])

    def split(x):
        return x[:nq], x[nq:2 * nq], x[2 * nq:2 * nq + nl], x[2 * nq + nl:]

    def residual(x):
        q1, v1, lam, mu = split(x)
        G1 = _G(sys, q1)
        return np.concatenate([
            q1 - q - tau * (v1 - G1.T @ mu),
            M @ (v1 - v) - tau * np.asarray(sys.force(q1, v1, t1)) + tau * G1.T @ lam,
            G1 @ v1 - d_vel,
            np.asarray(sys.bilateral(q1)) - d_pos,
        ])

    n = 2 * nq + 2 * nl
    iq, iv, il, im = slice(0, nq), slice(nq, 2 * nq), slice(2 * nq, 2 * nq + nl), slice(2 * nq + nl, n)
    J = np.zeros((n, n))
    J[iq, iv] = -tau * np.eye(nq)
    J[iv, iv] = M - tau * Kv
    R = residual(x)
    res = np.abs(R).max()
    for it in range(cfg.newton_max_iter + 1):
        if res <= cfg.newton_tol:
            q1, v1, lam, mu = split(x)
            return state.evolve(t=t1, q=q1, v=v1, lam=lam.copy(), mu=mu.copy(),
                                info={"iterations": it})
        if it == cfg.newton_max_iter:
            break
        q1, v1, lam, mu = split(x)
        G1 = _G(sys, q1)
        # one central-difference sweep gives d(G^T mu), d(G^T lam) and d(G v1)
        dGTmu = np.zeros((nq, nq))
        dGTlam = np.zeros((nq, nq))
        dGv = np.zeros((nl, nq))
        for i in range(nq if nl else 0):
            h = 1e-6 * max(1.0, abs(q1[i]))
            e = np.zeros(nq)
            e[i] = h
            dG = (_G(sys, q1 + e) - _G(sys, q1 - e)) / (2.0 * h)
            dGTmu[:, i] = dG.T @ mu
            dGTlam[:, i] = dG.T @ lam
            dGv[:, i] = dG @ v1
        J[iq, iq] = np.eye(nq) + tau * dGTmu
        J[iq, im] = tau * G1.T
        J[iv, iq] = -tau * Kq + tau * dGTlam
        J[iv, il] = tau * G1.T
        J[il, iq] = dGv
        J[il, iv] = G1
        J[im, iq] = G1
        try:
            x = x + np.linalg.solve(J, -R)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("singular GGL Newton matrix") from exc
        R = residual(x)
        res = np.abs(R).max()
    raise StepFailure(f"GGL Newton did not converge (|R| = {res:.3e})", residual=res)


def half_explicit_euler_step(sys: MechanicalSystem, state: SystemState,
                             cfg: IntegratorConfig, drive: ConstraintDrive = _NO_DRIVE):
    """Explicit position update, velocity from the mixed saddle system."""
    tau = cfg.tau
    q, v, t = state.q, state.v, state.t
    q1 = q + tau * v
    M = MassSolver(sys.mass(q))
    rhs = M.M @ v + tau * np.asarray(sys.force(q, v, t), dtype=float)
    v1, tau_lam = solve_saddle(M, _G(sys, q), _G(sys, q1), rhs,
                               drive.at("velocity", t + tau, sys.n_lambda))
    return state.evolve(t=t + tau, q=q1, v=v1, lam=tau_lam / tau)


def project_position(sys: MechanicalSystem, q_raw, cfg: IntegratorConfig,
                     d_pos=None):
    """Mass-weighted projection of ``q_raw`` onto ``g(q) = d_pos`` (simplified Newton)."""
    q_raw = np.asarray(q_raw, dtype=float)
    nl = sys.n_lambda
    d_pos = np.zeros(nl) if d_pos is None else d_pos
    qt = q_raw.copy()
    mu = np.zeros(nl)
    if nl == 0:
        return qt, mu
    M = MassSolver(sys.mass(q_raw))
    for _ in range(cfg.newton_max_iter + 1):
        G = _G(sys, qt)
        r1 = M.M @ (qt - q_raw) + G.T @ mu
        r2 = np.asarray(sys.bilateral(qt)) - d_pos
        res = max(np.abs(r1).max(), np.abs(r2).max())
        if res <= cfg.newton_tol:
            return qt, mu
        dq, dmu = solve_saddle(M, G, G, -r1, -r2)
        qt = qt + dq
        mu = mu + dmu
    raise ProjectionFailure(f"position projection did not converge (|r| = {res:.3e})",
                            residual=res)


def project_velocity(sys: MechanicalSystem, q_tilde, v_raw, d_vel=None):
    """Mass-weighted projection of ``v_raw`` onto ``G(q_tilde) v = d_vel``."""
    nl = sys.n_lambda
    d_vel = np.zeros(nl) if d_vel is None else d_vel
    v_raw = np.asarray(v_raw, dtype=float)
    if nl == 0:
        return v_raw.copy(), np.zeros(0)
    M = MassSolver(sys.mass(q_tilde))
    G = _G(sys, q_tilde)
    return solve_saddle(M, G, G, M.M @ v_raw, d_vel)


def projected_half_explicit_step(sys: MechanicalSystem, state: SystemState,
                                 cfg: IntegratorConfig, drive: ConstraintDrive = _NO_DRIVE):
    """Half-explicit Euler followed by position and velocity projection."""
    raw = half_explicit_euler_step(sys, state, cfg, drive)
    qt, mu = project_position(sys, raw.q, cfg, drive.at("position", raw.t, sys.n_lambda))
    vt, _ = project_velocity(sys, qt, raw.v, drive.at("velocity", raw.t, sys.n_lambda))
    return raw.evolve(q=qt, v=vt, mu=mu)


# --------------------------------------------------------------------------
# SHAKE


def _potential_gradient(sys, q, t):
    # conservative systems: f = -grad U
    return -np.asarray(sys.force(q, np.zeros_like(q), t), dtype=float)


def _shake_solve(sys, q_hat, q_curr, scale, cfg, Minv):
    """Find lam with ``g(q_hat - scale M^{-1} G(q_curr)^T lam) = 0``."""
    nl = sys.n_lambda
    lam = np.zeros(nl)
    if nl == 0:
        return q_hat, lam
    D = Minv.solve(_G(sys, q_curr).T)
    q_next = q_hat.copy()
    for _ in range(cfg.newton_max_iter + 1):
        r = np.asarray(sys.bilateral(q_next))
        res = np.abs(r).max()
        if res <= cfg.newton_tol:
            return q_next, lam
        J = -scale * _G(sys, q_next) @ D
        try:
            lam = lam + np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("singular SHAKE iteration matrix") from exc
        q_next = q_hat - scale * D @ lam
    raise StepFailure(f"SHAKE Newton did not converge (|g| = {res:.3e})", residual=res)


def shake_step(sys: MechanicalSystem, q_prev, q_curr, cfg: IntegratorConfig, t=0.0):
    """``q+ - 2q + q- = -tau^2 M^{-1}(grad U(q) + G(q)^T lam)``, ``g(q+) = 0``.

    The mass matrix must be constant; ``grad U`` is taken as ``-f(q, 0, t)``.
    Returns ``(q_next, lam)``.
    """
    if sys.potential is None:
        raise ContractError("SHAKE requires a conservative system with a potential")
    q_prev = np.asarray(q_prev, dtype=float)
    q_curr = np.asarray(q_curr, dtype=float)
    tau2 = cfg.tau ** 2
    Minv = MassSolver(sys.mass(q_curr))
    q_hat = 2.0 * q_curr - q_prev - tau2 * Minv.solve(_potential_gradient(sys, q_curr, t))
    return _shake_solve(sys, q_hat, q_curr, tau2, cfg, Minv)


def shake_start(sys: MechanicalSystem, q0, v0, cfg: IntegratorConfig, t=0.0):
    """First position ``q1 = q0 + tau v0 - tau^2/2 M^{-1}(grad U + G^T lam)`` on the manifold."""
    q0 = np.asarray(q0, dtype=float)
    half = 0.5 * cfg.tau ** 2
    Minv = MassSolver(sys.mass(q0))
    q_hat = q0 + cfg.tau * np.asarray(v0, dtype=float) - half * Minv.solve(
        _potential_gradient(sys, q0, t))
    return _shake_solve(sys, q_hat, q0, half, cfg, Minv)


def integrate_shake(sys: MechanicalSystem, state0: SystemState, cfg: IntegratorConfig,
                    t_end, stride=1, observers=None):
    """SHAKE trajectory; velocities are central differences of positions."""
    n_steps = int(round((t_end - state0.t) / cfg.tau))
    tau = cfg.tau
    rec = TrajectoryRecorder(sys, stride, observers)
    rec.record(state0)
    q_prev = state0.q
    try:
        q_curr, lam = shake_start(sys, state0.q, state0.v, cfg, state0.t)
    except StepFailure as exc:
        exc.step = 1
        raise
    state = state0
    for n in range(1, n_steps + 1):
        t_n = state0.t + n * tau
        try:
            q_next, lam = shake_step(sys, q_prev, q_curr, cfg, t_n)
        except StepFailure as exc:
            exc.step = n + 1
            raise
        v_n = (q_next - q_prev) / (2.0 * tau)
        state = state.evolve(t=t_n, q=q_curr, v=v_n, lam=lam)
        rec.record(state)
        q_prev, q_curr = q_curr, q_next
    return rec.finish(state)


# --------------------------------------------------------------------------
# drivers

STEPPERS = {
    "index3": acceleration_level_step,
    "baumgarte": baumgarte_step,
    "ggl": ggl_step,
    "half-explicit": projected_half_explicit_step,
    "half-explicit-raw": half_explicit_euler_step,
}


def integrate(stepper, sys: MechanicalSystem, state0: SystemState, cfg: IntegratorConfig,
              t_end, drive: ConstraintDrive = _NO_DRIVE, stride=1, observers=None):
    """Run ``stepper`` on the fixed grid ``t0 + n tau`` up to ``t_end``."""
    if isinstance(stepper, str):
        stepper = STEPPERS[stepper]
    n_steps = int(round((t_end - state0.t) / cfg.tau))
    rec = TrajectoryRecorder(sys, stride, observers)
    rec.record(state0)
    state = state0
    for n in range(1, n_steps + 1):
        try:
            state = stepper(sys, state, cfg, drive)
        except StepFailure as exc:
            exc.step = n
            log.error("step %d failed: %s", n, exc)
            raise
        # pin times to the grid so long runs do not accumulate rounding
        state = state.evolve(t=state0.t + n * cfg.tau)
        rec.record(state)
    return rec.finish(state)


def perturbation_probe(formulation, sys: MechanicalSystem, state0: SystemState,
                       epsilon, omega_list, horizon, cfg: IntegratorConfig):
    """Deviation caused by a defect ``epsilon sin(omega t)`` in the constraint rows.

    The defect enters every constraint equation the formulation carries:
    ``index3`` integrates ``g(q) = delta`` through its second derivative,
    ``ggl`` perturbs both ``g(q)`` and ``G v`` rows by ``delta``, and
    ``baumgarte`` perturbs its single stabilized acceleration row. The
    deviation is the max-norm difference of ``(q, v, lam)`` against the
    unperturbed run. Returns a list of ``(omega, deviation)``.
    """
    if formulation not in ("index3", "ggl", "baumgarte"):
        raise ContractError(f"unknown formulation {formulation!r}")
    stepper = STEPPERS[formulation]
    ref = integrate(stepper, sys, state0, cfg, state0.t + horizon)
    ref_x = _stack(ref)
    table = []
    for omega in omega_list:
        if epsilon == 0.0:
            table.append((float(omega), 0.0))
            continue
        t0 = state0.t
        delta = lambda t, w=omega: epsilon * np.sin(w * (t - t0)) * np.ones(sys.n_lambda)
        if formulation == "index3":
            drive = ConstraintDrive(
                acceleration=lambda t, w=omega: -epsilon * w * w * np.sin(w * (t - t0))
                * np.ones(sys.n_lambda))
        elif formulation == "ggl":
            drive = ConstraintDrive(position=delta, velocity=delta)
        else:
            drive = ConstraintDrive(acceleration=delta)
        run = integrate(stepper, sys, state0, cfg, t0 + horizon, drive=drive)
        table.append((float(omega), float(np.abs(_stack(run) - ref_x).max())))
    return table


def _stack(traj):
    return np.hstack([traj.q, traj.v, traj.lam])
