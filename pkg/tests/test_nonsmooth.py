import numpy as np
import pytest

from cdyn.core import MechanicalSystem, SystemState, total_energy
from cdyn.errors import ContractError, StepFailure
from cdyn.integrators import IntegratorConfig, acceleration_level_step
from cdyn.lcp import LcpSolverConfig
from cdyn.nonsmooth import (LinearForce, NonsmoothConfig, active_set,
                            assemble_contact_problem, moreau_jean_step, simulate)
from cdyn.scenarios import build_bouncing_ball, build_disk_pile, build_pendulum


def ball_state(sys_, q, v):
    return SystemState.initial(sys_, [q], [v])


def test_config_validation():
    with pytest.raises(ContractError):
        NonsmoothConfig(h=0.0)
    with pytest.raises(ContractError):
        NonsmoothConfig(h=1e-3, restitution=1.5)
    with pytest.raises(ContractError):
        NonsmoothConfig(h=1e-3, theta=0.0)  # linearized rows need theta > 0
    with pytest.raises(ContractError):
        NonsmoothConfig(h=1e-3, constraint_mode="penalty")


def test_active_set_examples():
    B, _ = build_bouncing_ball()
    assert active_set(B, [1.0], 0.0).size == 0
    assert list(active_set(B, [0.0], 0.0)) == [0]
    D, _ = build_disk_pile(2, 1.0, (20.0, 20.0), positions=[(5.0, 5.0), (7.0 - 1e-9, 5.0)])
    assert list(active_set(D, np.array([5.0, 5.0, 7.0 - 1e-9, 5.0]), 1e-6)) == [0]


def test_ball_contact_problem_example():
    B, _ = build_bouncing_ball(gamma=10.0, mass=1.0)
    s = ball_state(B, 0.0, -1.0)
    for mode in ("linearized", "active_set"):
        pr = assemble_contact_problem(B, s, NonsmoothConfig(h=1e-3, constraint_mode=mode))
        assert pr.A.toarray()[0, 0] == pytest.approx(1.0)
        assert pr.b[0] == pytest.approx(-1.01)


def test_no_active_contact_gives_empty_problem():
    B, _ = build_bouncing_ball()
    pr = assemble_contact_problem(B, ball_state(B, 0.5, 0.0), NonsmoothConfig(h=1e-3, constraint_mode="active_set"))
    assert pr.m == 0


def test_stacked_disks_delassus():
    D, s = build_disk_pile(2, 1.0, (10.0, 10.0), positions=[(5.0, 1.0), (5.0, 3.0)])
    pr = assemble_contact_problem(D, s, NonsmoothConfig(h=1e-3, constraint_mode="active_set"))
    A = pr.A.toarray()
    assert list(pr.index_map) == [0, 1]  # pair, floor of disk 0
    assert np.allclose(A, [[2.0, -1.0], [-1.0, 1.0]])
    assert np.allclose(A, A.T) and np.linalg.eigvalsh(A).min() >= -1e-10


def test_ball_impact_examples():
    B, _ = build_bouncing_ball(gamma=10.0, mass=2.0)
    h = 1e-4
    s1 = moreau_jean_step(B, ball_state(B, 0.0, -1.0), NonsmoothConfig(h=h))
    assert s1.p[0] == pytest.approx(2.0 * (1 + 10.0 * h), rel=1e-9)
    assert abs(s1.v[0]) <= 1e-9
    B0, _ = build_bouncing_ball(gamma=1e-300, mass=1.0)
    s1 = moreau_jean_step(B0, ball_state(B0, 0.0, -1.0), NonsmoothConfig(h=h, restitution=1.0))
    assert s1.v[0] == pytest.approx(1.0, abs=1e-9) and s1.p[0] == pytest.approx(2.0, abs=1e-9)


def test_no_contacts_matches_smooth_stepper():
    f = lambda q, v, t: np.array([1.0 - q[0], -2.0 * v[1]])
    sys_ = MechanicalSystem(n_q=2, mass=lambda q: np.diag([1.0, 3.0]), force=f)
    s = SystemState.initial(sys_, [0.3, 0.1], [0.5, -0.2])
    a = moreau_jean_step(sys_, s, NonsmoothConfig(h=1e-2))
    b = acceleration_level_step(sys_, s, IntegratorConfig(tau=1e-2))
    assert np.allclose(a.q, b.q, atol=1e-14) and np.allclose(a.v, b.v, atol=1e-14)


def test_free_fall_matches_closed_form():
    B, s = build_bouncing_ball(gamma=9.81, height=100.0, velocity=2.0)
    h = 1e-3
    tr = simulate(B, s, NonsmoothConfig(h=h), 1.0)
    exact = 100.0 + 2.0 * tr.times - 0.5 * 9.81 * tr.times ** 2
    assert np.abs(tr.q[:, 0] - exact).max() <= 10 * h


def test_per_step_complementarity_and_impulse_sign():
    B, s = build_bouncing_ball()
    tol = 1e-10
    cfg = NonsmoothConfig(h=1e-3, restitution=0.3, solver=LcpSolverConfig(tol=tol))
    state = s
    for _ in range(1500):
        state = moreau_jean_step(B, state, cfg)
        assert np.all(state.p >= 0.0)
        assert state.info["comp_res"] <= tol


def test_impulses_equal_momentum_change():
    B, s = build_bouncing_ball(gamma=9.81, height=1.0, mass=3.0)
    h = 1e-3
    tr = simulate(B, s, NonsmoothConfig(h=h, restitution=0.5), 1.5)
    total_p = tr.series["impulse"].sum()
    gravity = -3.0 * 9.81 * h * (len(tr.series["impulse"]) - 1)
    dmom = 3.0 * (tr.final.v[0] - s.v[0])
    assert dmom == pytest.approx(gravity + total_p, abs=1e-10)


def test_dissipation_on_contact_steps():
    # two disks colliding head-on in free space: no external work
    D, s = build_disk_pile(2, 1.0, (40.0, 40.0), gamma=1e-300,
                           positions=[(10.0, 10.0), (12.5, 10.0)])
    state = s.evolve(v=np.array([1.0, 0.0, -1.0, 0.0]))
    cfg = NonsmoothConfig(h=1e-3)
    contacts = 0
    for _ in range(600):
        new = moreau_jean_step(D, state, cfg)
        if np.any(new.p > 0):
            contacts += 1
            assert total_energy(D, new.q, new.v) <= total_energy(D, state.q, state.v) + 1e-12
        state = new
    assert contacts > 0


def test_linearized_mode_corrects_initial_violation():
    B, _ = build_bouncing_ball()
    s = ball_state(B, -0.01, 0.0)
    s1 = moreau_jean_step(B, s, NonsmoothConfig(h=1e-3))
    assert s1.q[0] >= -1e-12
    s1 = moreau_jean_step(B, s, NonsmoothConfig(h=1e-3, constraint_mode="active_set"))
    assert s1.q[0] < -0.009  # active-set rows keep the violation


def test_bilateral_rows_are_free():
    P, s = build_pendulum(1.0, 0.5)
    cfg = NonsmoothConfig(h=1e-3)
    tr = simulate(P, s, cfg, 2.0)
    # second-order remainder of the linearized rows stays O(h^2)
    assert tr.diagnostics["g_inf"].max() <= 1e-6
    P0, s0 = build_pendulum(1.0)
    s1 = moreau_jean_step(P0, s0, cfg)
    assert s1.lam[0] == pytest.approx(0.5, rel=1e-8)


def test_theta_half_linear_force_conserves_oscillator_energy():
    k = 4.0
    sys_ = MechanicalSystem(n_q=1, mass=lambda q: np.eye(1), force=lambda q, v, t: -k * q)
    cfg = NonsmoothConfig(h=1e-2, theta=0.5, linear_force=LinearForce(np.array([[k]]), np.zeros((1, 1))))
    s = SystemState.initial(sys_, [1.0], [0.0])
    energy = lambda st: 0.5 * st.v[0] ** 2 + 0.5 * k * st.q[0] ** 2
    state = s
    for _ in range(1000):
        state = moreau_jean_step(sys_, state, cfg)
    assert energy(state) == pytest.approx(energy(s), rel=1e-12)


def test_solver_failure_is_not_accepted():
    D, s = build_disk_pile(2, 1.0, (10.0, 10.0), positions=[(5.0, 1.0), (5.0, 3.0)])
    cfg = NonsmoothConfig(h=1e-3, solver=LcpSolverConfig(max_iter=1, variant="pgj"))
    with pytest.raises(StepFailure) as info:
        simulate(D, s, cfg, 0.01)
    assert info.value.step == 1


def test_augmented_lagrangian_inside_step_matches_pgs():
    D, s = build_disk_pile(2, 1.0, (10.0, 10.0), positions=[(5.0, 1.0), (5.0, 3.0)])
    a = moreau_jean_step(D, s, NonsmoothConfig(h=1e-3))
    b = moreau_jean_step(D, s, NonsmoothConfig(h=1e-3, solver=LcpSolverConfig(variant="augmented_lagrangian")))
    assert np.allclose(a.p, b.p, atol=1e-9)


def test_simulation_is_deterministic():
    D, s = build_disk_pile(12, 1.0, (10.0, 20.0), seed=4)
    cfg = NonsmoothConfig(h=1e-3, contact_margin=0.5, solver=LcpSolverConfig(tol=1e-8))
    a = simulate(D, s, cfg, 0.3)
    b = simulate(D, s, cfg, 0.3)
    assert np.array_equal(a.q, b.q)
