import numpy as np
import pytest

from sstlab.ctmc import BDOracle, simulate_minimal
from sstlab.interval_dual import (FULL, INF, TERMINALS, WINDOW_CAP, ExplosionPolicy,
                                  IntervalDual, IntervalKernel, IntervalModel, IntervalState,
                                  comparison_rates, comparison_rates_left, dual_rate_terms,
                                  run_trials, simulate_coupled, simulate_dual)
from sstlab.intertwining import (Coupling, algebraic_residual, lambda_row,
                                 simulate_dual_given_primal)
from sstlab.rng import SeedSpec
from sstlab.state_space import F1, F2, mu_bd

S = IntervalState


@pytest.fixture(scope="module")
def m2():
    return IntervalModel(F2)


def test_f2_interval_rates_exact(m2):
    r = dual_rate_terms(S(0, 2), m2)
    assert r["grow_right"] == pytest.approx(15 / 7, rel=1e-14)
    assert r["grow_left"] == pytest.approx(9 / 7, rel=1e-14)


def test_half_line_has_no_left_moves(m2):
    r = dual_rate_terms(S(-INF, 3), m2)
    assert r["grow_left"] == 0 and r["shrink_left"] == 0
    assert r["grow_right"] > 0


def test_full_state_is_absorbing(m2):
    assert IntervalDual(m2).row(FULL) == []


def test_comparison_rate_f2(m2):
    up, _ = comparison_rates(0, m2)
    assert up == pytest.approx(5 / 2, rel=1e-14)


def test_comparison_is_limit_of_interval_rates(m2):
    for q in range(-3, 4):
        up, down = comparison_rates(q, m2)
        r = dual_rate_terms(S(-INF, q), m2)
        assert r["grow_right"] == pytest.approx(up, rel=1e-12)
        assert r["shrink_right"] == pytest.approx(down, rel=1e-12)


def test_domination_sweep(m2):
    rng = np.random.default_rng(0)
    for _ in range(1000):
        p, q = sorted(rng.integers(-50, 51, size=2))
        r = dual_rate_terms(S(int(p), int(q)), m2)
        up, down = comparison_rates(int(q), m2)
        assert r["grow_right"] >= up * (1 - 1e-12)
        assert r["shrink_right"] <= down * (1 + 1e-12)
        upl, downl = comparison_rates_left(int(p), m2)
        assert r["grow_left"] >= upl * (1 - 1e-12)
        assert r["shrink_left"] <= downl * (1 + 1e-12)


def test_lambda_row_f2_interval(m2):
    row = lambda_row(S(0, 2), mu_bd(F2))
    assert row.prob(1) == pytest.approx(2 / 7, rel=1e-14)
    assert row.total() == pytest.approx(1.0, abs=1e-14)
    assert lambda_row(S(4, 4), mu_bd(F2)).prob(4) == 1.0


def test_coupled_rate_cancellation(m2):
    c = Coupling(BDOracle(F2), IntervalDual(m2), IntervalKernel(m2))
    r = c.rate((1, S(0, 1)), (1, S(0, 2)))
    assert r.rate == pytest.approx(2.0, rel=1e-14)
    r = c.rate((1, S(0, 3)), (2, S(0, 3)))
    assert r.rate == pytest.approx(1.0, rel=1e-14)


def test_coupled_row_sums_to_zero(m2):
    c = Coupling(BDOracle(F2), IntervalDual(m2), IntervalKernel(m2))
    for xbar in [(0, S(0, 0)), (1, S(0, 2)), (-2, S(-3, 1)), (0, S(-INF, 4))]:
        row = c.row(xbar)
        assert abs(sum(r.rate for r in row)) < 1e-10


@pytest.mark.parametrize("fam", [F1, F2], ids=["F1", "F2"])
def test_residual_small_window(fam):
    m = IntervalModel(fam)
    states = [S(p, q) for p in range(-6, 7) for q in range(p, 7)]
    states += [S(-INF, q) for q in range(-6, 7)] + [S(p, INF) for p in range(-6, 7)]
    rep = algebraic_residual(BDOracle(fam, "extended"), IntervalDual(m, "extended"),
                             IntervalKernel(m, "extended"), states, reach=10)
    assert rep.interior_max < 1e-9


def test_residual_detects_perturbation(m2):
    states = [S(p, q) for p in range(-4, 5) for q in range(p, 5)]

    def bump(Q, row):
        if Q == S(0, 2):
            return [(t, r * (1 + 1e-3) if k == 0 else r) for k, (t, r) in enumerate(row)]
        return row

    rep = algebraic_residual(BDOracle(F2), IntervalDual(m2), IntervalKernel(m2), states,
                             reach=8, perturb=bump)
    assert rep.interior_max >= 1e-4


def test_full_init_absorbs_at_zero():
    tr = simulate_dual(F1, (None, None), 10.0, ExplosionPolicy(M=64), SeedSpec(1))
    assert tr.absorption_time == 0.0


def test_f1_dual_absorbs_f2_does_not():
    pol = ExplosionPolicy(M=64)
    b1 = run_trials(F1, 200, 1e3, pol, 5, init=(0, 0))
    assert b1.absorbed.all()
    b2 = run_trials(F2, 200, 1e3, pol, 5, init=(0, 0))
    assert not b2.absorbed.any()
    assert {TERMINALS[int(t)] for t in b2.terminal} <= {"HorizonReached", "NoExplosionDetected"}


def test_explosion_events_raise_stratum():
    tr = simulate_dual(F1, (0, 0), 1e3, ExplosionPolicy(M=64), SeedSpec(2))
    assert tr.terminal == "Absorbed"
    assert len(tr.explosion_events) == 2
    for _, _, before, after in tr.explosion_events:
        assert after == before + 1


@pytest.mark.parametrize("fam", [F1, F2], ids=["F1", "F2"])
def test_kernel_matches_python_reference(fam):
    """The compiled coupled kernel and the generic construction agree path by path."""
    m = IntervalModel(fam)
    pol = ExplosionPolicy(M=64)
    for s in range(8):
        sd = SeedSpec(7, s)
        xt = simulate_minimal(BDOracle(fam), 0, 3.0, 10**6, sd)
        ref = simulate_dual_given_primal(xt, S(0, 0), BDOracle(fam), IntervalDual(m),
                                         IntervalKernel(m), sd, policy=pol,
                                         stop_at_absorption=True)
        k = simulate_coupled(m, 0, (0, 0), 3.0, pol, sd)
        assert list(ref.dual) == list(k.states)
        assert list(ref.primal) == list(k.primal)
        np.testing.assert_allclose(ref.times, k.times, rtol=1e-12)


def test_batch_independent_of_threads():
    pol = ExplosionPolicy(M=64)
    a = run_trials(F1, 300, 1e3, pol, 9, init=(0, 0), coupled=True, mu0=("point", 0), threads=1)
    b = run_trials(F1, 300, 1e3, pol, 9, init=(0, 0), coupled=True, mu0=("point", 0), threads=4)
    assert np.array_equal(a.absorption_time, b.absorption_time, equal_nan=True)
    assert np.array_equal(a.final_x, b.final_x)


def test_window_cap_stops_far_excursions():
    pol = ExplosionPolicy(M=64, window_cap=200)
    b = run_trials(F1, 3000, 1e3, pol, 2, init=(0, 0), coupled=True, mu0=("point", 0))
    capped = b.terminal == WINDOW_CAP
    assert capped.any() and np.all(np.isnan(b.absorption_time[capped]))
    assert np.array_equal(b.censored, capped)
    with pytest.raises(ValueError):
        ExplosionPolicy(M=64, window_cap=64)
