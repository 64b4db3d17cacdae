import math

import numpy as np
import pytest
from scipy.linalg import expm

from sstlab.ctmc import (ABSORBED, HORIZON, BDOracle, FiniteGenerator, MatrixOracle,
                         simulate_minimal, transient_distribution, transition_matrix,
                         truncate_bd, validate_generator)
from sstlab.errors import BadRowSums, NonSquare
from sstlab.rng import SeedSpec
from sstlab.state_space import F1, F2, mu_bd


def two_state(rate=1.0):
    return FiniteGenerator(np.array([[-rate, rate], [rate, -rate]]), (0, 1))


def test_absorbing_initial_state():
    gen = FiniteGenerator(np.array([[0.0, 0.0], [1.0, -1.0]]), (0, 1))
    tr = simulate_minimal(MatrixOracle(gen), 0, 10.0, 100, SeedSpec(1))
    assert tr.terminal == ABSORBED and tr.states == [0]


def test_same_seed_same_trajectory():
    a = simulate_minimal(BDOracle(F2), 0, 5.0, 10**4, SeedSpec(3, 7))
    b = simulate_minimal(BDOracle(F2), 0, 5.0, 10**4, SeedSpec(3, 7))
    assert a.states == b.states and a.times == b.times
    c = simulate_minimal(BDOracle(F2), 0, 5.0, 10**4, SeedSpec(3, 8))
    assert c.times != a.times


def test_flip_chain_holding_time_mean():
    oracle = MatrixOracle(two_state(1.0))
    hold = [simulate_minimal(oracle, 0, 1e9, 1, SeedSpec(11, k)).times for k in range(10**4)]
    first = np.array([t[1] for t in hold])
    assert abs(first.mean() - 1.0) <= 3 / math.sqrt(10**4)


def test_trajectory_times_increase_and_horizon():
    tr = simulate_minimal(BDOracle(F1), 0, 2.0, 10**6, SeedSpec(5))
    assert tr.terminal == HORIZON
    assert np.all(np.diff(tr.times) > 0) and tr.times[-1] <= 2.0


def test_transient_identity_at_zero():
    v = np.array([0.3, 0.7])
    assert np.array_equal(transient_distribution(two_state(), v, 0.0), v)


def test_two_state_closed_form():
    mt = transient_distribution(two_state(), np.array([1.0, 0.0]), 1.0)
    assert mt[0] == pytest.approx((1 + math.exp(-2)) / 2, abs=1e-13)


def test_transition_matrix_rows_sum_to_one():
    gen = truncate_bd(F2, (-8, 8))
    for method in ("uniformization", "auto"):
        P = transition_matrix(gen, 0.7, method=method)
        assert np.max(np.abs(P.sum(axis=1) - 1)) < 1e-10
        assert np.allclose(P, expm(0.7 * gen.matrix), atol=1e-12)


def test_stiff_path_matches_expm():
    # rates up to 2^12 with t = 10 leave the uniformization budget
    gen = truncate_bd(F1, (-12, 12))
    v = np.zeros(25)
    v[12] = 1.0
    got = transient_distribution(gen, v, 10.0)
    want = v @ expm(10.0 * gen.matrix)
    assert np.max(np.abs(got - want)) < 1e-10


def test_window_of_one_state():
    assert truncate_bd(F2, (0, 0)).matrix.shape == (1, 1)
    assert truncate_bd(F2, (0, 0)).matrix[0, 0] == 0.0


def test_f2_interior_rows():
    q = truncate_bd(F2, (-5, 5)).matrix
    for n in range(-4, 5):
        k = n + 5
        a = 2.0 if n >= 1 else 0.5
        assert q[k, k - 1] == pytest.approx(a, rel=1e-15)
        assert q[k, k + 1] == pytest.approx(1.0, rel=1e-15)
        assert q[k, k] == pytest.approx(-a - 1.0, rel=1e-15)


def test_truncated_stationary_vector_matches_mu():
    gen = truncate_bd(F1, (-30, 30))
    # pi Q = 0 solved directly: replace one equation by the normalization
    A = gen.matrix.T.copy()
    A[-1, :] = 1.0
    rhs = np.zeros(61)
    rhs[-1] = 1.0
    pi = np.linalg.solve(A, rhs)
    mu = mu_bd(F1, (-30, 30))
    lm = np.asarray(mu.log_mu(np.arange(-30, 31)))
    w = np.exp(lm - np.logaddexp.reduce(lm))
    assert np.max(np.abs(pi - w)) < 1e-8


def test_validate_rejects_bad_generators():
    with pytest.raises(NonSquare):
        validate_generator(np.zeros((2, 3)))
    with pytest.raises(BadRowSums):
        validate_generator(np.array([[-1.0, 2.0], [1.0, -1.0]]))
    with pytest.raises(BadRowSums):
        validate_generator(np.array([[1.0, -1.0], [1.0, -1.0]]))
