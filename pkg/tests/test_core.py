import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from cdyn.core import (MassSolver, MechanicalSystem, SystemState, check_mass_matrix,
                       constraint_residuals, is_feasible, jacobian_errors, kinetic_energy,
                       saddle_matrix, solve_saddle, total_energy)
from cdyn.errors import ContractError, RankDeficiencyError, UnsupportedOperationError
from cdyn.scenarios import build_bouncing_ball, build_disk_pile, build_pendulum


def point_mass(n=2):
    return MechanicalSystem(n_q=n, mass=lambda q: np.eye(n), force=lambda q, v, t: np.zeros(n))


def test_kinetic_energy_examples(unit_pendulum):
    P, _ = unit_pendulum
    assert kinetic_energy(point_mass(), [1.0, 2.0], [0.0, 0.0]) == 0.0
    assert kinetic_energy(point_mass(), [0.0, 0.0], [3.0, 4.0]) == 12.5
    assert kinetic_energy(P, [0.0, -1.0], [1.0, 0.0]) == 0.5


def test_kinetic_energy_dimension_mismatch():
    with pytest.raises(ContractError):
        kinetic_energy(point_mass(), [0.0], [1.0, 2.0])


def test_total_energy_examples(unit_pendulum):
    P, _ = unit_pendulum
    assert total_energy(P, [0.0, -1.0], [0.0, 0.0]) == -1.0
    assert total_energy(P, [0.0, -1.0], [1.0, 0.0]) == -0.5
    free = MechanicalSystem(n_q=1, mass=lambda q: np.eye(1), force=lambda q, v, t: np.zeros(1),
                            potential=lambda q: 0.0)
    assert total_energy(free, [0.3], [0.0]) == 0.0
    with pytest.raises(UnsupportedOperationError):
        total_energy(point_mass(), [0.0, 0.0], [0.0, 0.0])


def test_constraint_residual_examples(unit_pendulum):
    P, _ = unit_pendulum
    g, Gv, gu = constraint_residuals(P, [0.0, -1.0], [1.0, 0.0])
    assert g[0] == 0.0 and Gv[0] == 0.0 and gu.size == 0
    g, _, _ = constraint_residuals(P, [0.6, -0.8], [0.0, 0.0])
    assert abs(g[0]) < 1e-15


def test_system_rejects_too_many_constraints():
    with pytest.raises(ContractError):
        MechanicalSystem(n_q=1, n_lambda=1, mass=lambda q: np.eye(1),
                         force=lambda q, v, t: np.zeros(1), bilateral=lambda q: q,
                         bilateral_jacobian=lambda q: np.eye(1), curvature=lambda q, v: 0 * q)


def test_state_dimension_check(unit_pendulum):
    P, _ = unit_pendulum
    with pytest.raises(ContractError):
        SystemState.initial(P, [0.0, -1.0, 0.0], [0.0, 0.0, 0.0])


@given(st.floats(-np.pi, np.pi), st.floats(-3, 3))
def test_energy_identity(alpha, omega):
    P, s = build_pendulum(2.0, alpha, omega)
    assert total_energy(P, s.q, s.v) == pytest.approx(
        kinetic_energy(P, s.q, s.v) + 2.0 * s.q[1], abs=1e-14)
    assert kinetic_energy(P, s.q, s.v) >= 0.0


def test_jacobians_match_finite_differences(rng):
    P, _ = build_pendulum(9.81)
    for _ in range(20):
        a = rng.uniform(-np.pi, np.pi)
        q = np.array([np.sin(a), -np.cos(a)])
        v = rng.normal() * np.array([np.cos(a), np.sin(a)]) + rng.normal(size=2) * 0.1
        errs = jacobian_errors(P, q, v)
        assert errs["G"] <= 1e-5 and errs["kappa"] <= 1e-4
    B, _ = build_bouncing_ball()
    for _ in range(20):
        assert jacobian_errors(B, rng.uniform(0, 2, 1), rng.normal(size=1))["G_u"] <= 1e-5
    D, s = build_disk_pile(6, 1.0, (10.0, 10.0), seed=3)
    for _ in range(20):
        q = s.q + rng.normal(size=s.q.size) * 0.05
        assert jacobian_errors(D, q, np.zeros_like(q))["G_u"] <= 1e-5


def test_scenario_mass_matrices_are_spd():
    for M in (np.eye(2), np.array([[2.0]]), build_disk_pile(4, 1.0, (10.0, 10.0), 0)[0].mass(None).toarray()):
        assert check_mass_matrix(M)
    assert not check_mass_matrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert not check_mass_matrix(np.array([[1.0, 0.1], [0.0, 1.0]]))


def test_saddle_matrix_nonsingular_at_initial_state(pendulum):
    P, s = pendulum
    K = saddle_matrix(P.mass(s.q), P.bilateral_jacobian(s.q))
    assert np.allclose(K, K.T)
    assert np.linalg.matrix_rank(K) == 3


def test_solve_saddle_matches_dense_solve(rng):
    M = rng.normal(size=(4, 4))
    M = M @ M.T + 4 * np.eye(4)
    G = rng.normal(size=(2, 4))
    a, b = rng.normal(size=4), rng.normal(size=2)
    x, y = solve_saddle(M, G, G, a, b)
    ref = np.linalg.solve(saddle_matrix(M, G), np.concatenate([a, b]))
    assert np.allclose(np.concatenate([x, y]), ref, atol=1e-12)
    with pytest.raises(RankDeficiencyError):
        solve_saddle(M, np.zeros((1, 4)), np.zeros((1, 4)), a, b[:1])


def test_mass_solver_sparse_diagonal_fast_path():
    ms = MassSolver(sp.diags([2.0, 4.0], format="csr"))
    assert ms.diagonal
    assert np.allclose(ms.solve(np.array([2.0, 4.0])), [1.0, 1.0])


def test_feasibility_tolerance(unit_pendulum):
    P, _ = unit_pendulum
    assert is_feasible(P, [0.0, -1.0 - 4e-9])
    assert not is_feasible(P, [0.0, -1.0 - 1e-7])
