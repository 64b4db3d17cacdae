import math
from fractions import Fraction

import numpy as np
import pytest

from sstlab.errors import (DisconnectedGraph, EmptyCenter, InconsistentReversibility,
                           InvalidRates, NonSummableTail, WindowExceeded)
from sstlab.state_space import (F1, F2, FAILS, HOLDS, CustomRates, GraphSpec, Ray, TableRates,
                                check_assumptions, compute_center, detailed_balance_residual,
                                half_line, mu_bd, mu_graph, star_graph)
from sstlab.state_space.graph import BranchVertex, ShiftedRates


def exact_mu(births, deaths, n):
    """Unnormalized mu(n)/mu(0) = prod b_{k-1}/a_k for n >= 0, exact rationals."""
    out = Fraction(1)
    for k in range(1, n + 1):
        out *= Fraction(births(k - 1)) / Fraction(deaths(k))
    return out


def test_f2_mu_three_is_one_eighth():
    mu = mu_bd(F2)
    assert math.exp(mu.log_mu(3) - mu.log_mu(0)) == pytest.approx(1 / 8, rel=1e-14)


def test_f1_mu_ratio_matches_telescoping_product():
    mu = mu_bd(F1)
    for n in range(0, 40):
        want = exact_mu(lambda k: 2 ** k, lambda k: 2 ** k, n)
        got = math.exp(mu.log_mu(n) - mu.log_mu(0))
        assert got == pytest.approx(float(want), rel=1e-12)


def test_f1_normalization_is_one_third_at_origin():
    mu = mu_bd(F1)
    # sum_n 2^{-|n|} = 3
    assert math.exp(mu.log_mu(0) - mu.log_total) == pytest.approx(1 / 3, rel=1e-13)


def test_null_recurrent_rates_raise_nonsummable():
    flat = CustomRates(lambda n: np.zeros(np.shape(n)), lambda n: np.zeros(np.shape(n)), log=True)
    with pytest.raises(NonSummableTail):
        mu_bd(flat)
    assert check_assumptions(flat).positive_recurrent.status == FAILS


def test_window_invariance_of_mu():
    a, b = mu_bd(F2, (-20, 20)), mu_bd(F2, (-40, 40))
    n = np.arange(-20, 21)
    la = np.asarray(a.log_mu(n)) - a.log_total
    lb = np.asarray(b.log_mu(n)) - b.log_total
    assert np.max(np.abs(np.expm1(la - lb))) < 1e-12


def test_table_rates_reject_nonpositive_and_window():
    with pytest.raises(InvalidRates):
        TableRates(0, [1.0, 0.0], [1.0, 1.0])
    t = TableRates(-2, [1.0] * 4, [2.0] * 4)
    assert (t.lo, t.hi) == (-2, 2)
    with pytest.raises(WindowExceeded):
        mu_bd(t)  # the default window is wider than the support
    mu = mu_bd(t, (-2, 2))
    assert mu.log_mu(3) == -math.inf  # off the support: zero mass
    # mu(n)/mu(n-1) = 1/2 throughout
    assert math.exp(mu.log_mu(2) - mu.log_mu(-2)) == pytest.approx(1 / 16, rel=1e-14)


def test_detailed_balance_on_star():
    g = star_graph([F1, F1, F1])
    assert detailed_balance_residual(g, mu_graph(g)) < 1e-12


def test_single_branch_star_matches_half_line():
    g = star_graph([F2])
    mg = mu_graph(g)
    h = ShiftedRates(F2, 0)
    mh = mu_bd(h, (0, 60))
    for k in range(0, 30):
        # branch vertex k is state k+1 of F2; the center is state 0
        want = mh.log_mu(k + 1) - mh.log_mu(0)
        got = mg.log_mu(BranchVertex(0, k)) - mg.log_mu(0)
        assert got == pytest.approx(want, abs=1e-12)


def test_assumptions_f1():
    rep = check_assumptions(F1)
    assert rep.positive_recurrent.status == HOLDS
    assert rep.nonexplosive.status == HOLDS
    # sum mu(n)(a_n + b_n) = sum 2: not integrable
    assert rep.diag_integrable.status == FAILS


def test_assumptions_f2_all_hold():
    assert check_assumptions(F2).ok


def test_eight_to_n_family_is_explosive():
    # b_n = 8^n, a_n = 2*4^(n-1) on N
    r = CustomRates(lambda n: np.asarray(n) * math.log(8),
                    lambda n: math.log(2) + (np.asarray(n) - 1.0) * math.log(4), lo=0, log=True)
    assert check_assumptions(r).nonexplosive.status == FAILS


def _ray(anchor):
    return Ray(anchor, 1.0, 2.0, half_line(F2, "right"))


def test_star_center_is_hub():
    spec = GraphSpec(edges={}, rays=(_ray("v0"), _ray("v0"), _ray("v0")))
    g = compute_center(spec)
    assert g.center == ("v0",) and g.n_branches == 3


def test_two_hubs_center_contains_path():
    edges = {("h1", "a"): (1, 1), ("a", "b"): (1, 1), ("b", "c"): (1, 1), ("c", "h2"): (1, 1)}
    rays = (_ray("h1"), _ray("h1"), _ray("h2"), _ray("h2"))
    g = compute_center(GraphSpec(edges, rays))
    assert set(g.center) == {"h1", "a", "b", "c", "h2"}
    assert g.n_branches == 4
    assert compute_center(GraphSpec(edges, rays)).center == g.center


def test_line_has_empty_center():
    with pytest.raises(EmptyCenter):
        compute_center(GraphSpec({("a", "b"): (1, 1)}, (Ray("a", 1, 1, half_line(F2, "right")),
                                                        Ray("b", 1, 1, half_line(F2, "right")))))


def test_cycle_with_bad_ratio_product():
    edges = {(0, 1): (1, 1), (1, 2): (1, 1), (2, 0): (2, 1)}
    with pytest.raises(InconsistentReversibility):
        compute_center(GraphSpec(edges, (_ray(0), _ray(1), _ray(2))))


def test_disconnected_graph():
    with pytest.raises(DisconnectedGraph):
        compute_center(GraphSpec({(0, 1): (1, 1), (2, 3): (1, 1)}, (_ray(0),)))
