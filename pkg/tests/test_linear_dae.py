import numpy as np
import pytest
from hypothesis import given, strategies as st

from cdyn.errors import AnalysisError, DerivativeAvailabilityError, ToleranceAmbiguityError
from cdyn.linear_dae import (CanonicalBlocks, LinearDae, SourceTerm, check_consistency,
                             differentiation_index, is_consistent, nilpotency_degree,
                             pencil_is_regular, solve_decoupled, solve_nilpotent)
from cdyn.scenarios import build_differentiator, differentiator_initial, sine_source

J2 = np.array([[0.0, 1.0], [0.0, 0.0]])


def jordan_nilpotent(blocks):
    """Block-diagonal nilpotent matrix with Jordan blocks of the given sizes."""
    n = sum(blocks)
    N = np.zeros((n, n))
    pos = 0
    for b in blocks:
        for i in range(b - 1):
            N[pos + i, pos + i + 1] = 1.0
        pos += b
    return N


def smallest_nilpotent_power(N):
    # oracle independent of the library: exact integer powers
    P = np.eye(N.shape[0], dtype=np.int64)
    Ni = N.astype(np.int64)
    for k in range(1, N.shape[0] + 1):
        P = P @ Ni
        if not P.any():
            return k
    raise AssertionError("not nilpotent")


def random_canonical(rng, size_max=6):
    m = int(rng.integers(0, 3))
    blocks = []
    while sum(blocks) == 0 or (sum(blocks) < size_max and rng.random() < 0.5):
        blocks.append(int(rng.integers(1, size_max - sum(blocks) + 1)))
    N = jordan_nilpotent(blocks)
    T = np.linalg.qr(rng.normal(size=N.shape))[0]
    N = T @ N @ T.T  # similar to the Jordan form, same nilpotency degree
    C = rng.normal(size=(m, m))
    return CanonicalBlocks(C, N), smallest_nilpotent_power(jordan_nilpotent(blocks))


def test_pencil_regularity_examples():
    z = SourceTerm.zero(1)
    assert pencil_is_regular(LinearDae(np.eye(2), np.eye(2), SourceTerm.zero(2)))
    assert not pencil_is_regular(LinearDae(np.zeros((1, 1)), np.zeros((1, 1)), z))
    assert pencil_is_regular(build_differentiator())


def test_index_examples():
    assert differentiation_index(LinearDae(np.eye(3), np.random.default_rng(0).normal(size=(3, 3)),
                                           SourceTerm.zero(3))) == 0
    assert differentiation_index(LinearDae(J2, np.eye(2), SourceTerm.zero(2))) == 2
    assert differentiation_index(build_differentiator(2.0, 0.5)) == 2


def test_index_of_singular_pencil_raises():
    with pytest.raises(AnalysisError):
        differentiation_index(LinearDae(np.zeros((2, 2)), np.array([[1.0, 1.0], [1.0, 1.0]]),
                                        SourceTerm.zero(2)))


def test_tolerance_ambiguity_is_reported():
    E = np.diag([1.0, 1e-10])
    with pytest.raises(ToleranceAmbiguityError):
        differentiation_index(LinearDae(E, np.eye(2), SourceTerm.zero(2)), tol=1e-10)


def test_index_equals_nilpotency_on_random_canonical_forms():
    rng = np.random.default_rng(7)
    for _ in range(40):
        blocks, k = random_canonical(rng)
        dae = blocks.as_dae(SourceTerm.zero(blocks.C.shape[0]), SourceTerm.zero(blocks.N.shape[0]))
        assert differentiation_index(dae) == k
        assert nilpotency_degree(blocks.N, tol=1e-10) == k


def test_solve_nilpotent_examples():
    theta = SourceTerm.polynomial([[0, 1], [0, 0, 1]])  # (t, t^2)
    assert np.allclose(solve_nilpotent(np.zeros((3, 3)), SourceTerm.constant([1, 2, 3]), 0.7), [1, 2, 3])
    assert np.allclose(solve_nilpotent(J2, theta, 1.5), [-1.5, 2.25])
    assert np.allclose(solve_nilpotent(J2, SourceTerm.constant([4, 5]), 9.0), [4, 5])


def test_solve_nilpotent_needs_derivatives():
    theta = SourceTerm.from_derivatives([lambda t: np.array([t, t])])
    with pytest.raises(DerivativeAvailabilityError):
        solve_nilpotent(J2, theta, 0.0)


@given(st.integers(1, 5), st.integers(0, 2**32 - 1), st.floats(-2, 2))
def test_nilpotent_back_substitution(size, seed, t):
    rng = np.random.default_rng(seed)
    N = np.triu(rng.normal(size=(size, size)), 1)
    theta = SourceTerm.polynomial(rng.normal(size=(size, 5)))
    z = lambda s: solve_nilpotent(N, theta, s)
    h = 1e-5
    zdot = (z(t + h) - z(t - h)) / (2 * h)
    assert np.abs(N @ zdot + z(t) - theta(t)).max() <= 1e-6 * (1 + np.abs(theta(t)).max())


def test_source_derivatives_match_finite_differences():
    src = sine_source(2.0, 3.0)
    for t in (0.1, 1.0, 2.5):
        for k in range(3):
            fd = (src(t + 1e-6, k) - src(t - 1e-6, k)) / 2e-6
            assert np.allclose(fd, src(t, k + 1), rtol=1e-4, atol=1e-6)


def test_solve_decoupled_examples():
    times = np.linspace(0, 1, 11)
    zero = SourceTerm.zero(1)
    Y, Z = solve_decoupled(CanonicalBlocks(np.zeros((1, 1)), np.zeros((0, 0))), zero,
                           SourceTerm(lambda t, k: np.zeros(0), 10, 0),
                           [2.0], times)
    assert np.all(Y == 2.0)
    blocks = CanonicalBlocks(np.eye(1), np.zeros((1, 1)))
    Y, Z = solve_decoupled(blocks, zero, SourceTerm.constant([3.0]), [1.0], times)
    assert np.abs(Y[:, 0] - np.exp(-times)).max() <= 1e-10
    assert np.all(Z == 3.0)
    Y, _ = solve_decoupled(CanonicalBlocks(np.zeros((1, 1)), np.zeros((1, 1))),
                           SourceTerm.constant([1.0]), SourceTerm.zero(1), [0.0], times)
    assert np.abs(Y[:, 0] - times).max() <= 1e-10


def test_consistency_examples():
    theta = SourceTerm.polynomial([[0, 1], [0, 0, 1]])
    blocks = CanonicalBlocks(np.zeros((0, 0)), J2)
    assert check_consistency(blocks, theta, solve_nilpotent(J2, theta, 0.3), 0.3)
    assert not check_consistency(CanonicalBlocks(np.zeros((0, 0)), np.zeros((1, 1))),
                                 SourceTerm.constant([1.0]), [0.0], 0.0)
    src = sine_source()
    dae = build_differentiator(1.0, 1.0, src)
    x0 = differentiator_initial(1.0, 1.0, src)
    assert is_consistent(dae, x0, 0.0)
    bad = x0.copy()
    bad[2] += 0.1  # V3 != -(L/R) V'
    assert not is_consistent(dae, bad, 0.0)


def test_zero_input_circuit_zero_state_is_consistent():
    dae = build_differentiator(1.0, 1.0, SourceTerm.constant([0.0]))
    assert is_consistent(dae, np.zeros(6), 0.0)
