import math

import numpy as np
import pytest

from sstlab import _graph_kernels as GK
from sstlab import graph_dual as GD
from sstlab.ctmc import simulate_minimal
from sstlab.graph_dual import EMPTY, FULL, DualSet
from sstlab.interval_dual import ExplosionPolicy, IntervalModel, comparison_rates
from sstlab.intertwining import algebraic_residual
from sstlab.rng import DUAL, SeedSpec, UniformStream
from sstlab.state_space import F1, F2, line_as_graph, star_graph


@pytest.fixture(scope="module")
def star1():
    g = star_graph([F1, F1, F1])
    return g, GD.GraphDualModel(g)


def _rates(Q, m):
    return {t.encode(): r for t, r in GD.dual_transitions(Q, m)}


def test_encode_decode_examples(star1):
    g, _ = star1
    for text in ["C:1;B1:P3;B2:F;B3:-", "C:0;B1:-;B2:S3-7;B3:-", "C:0;B1:H4;B2:-;B3:-"]:
        Q = DualSet.decode(text, g)
        assert Q.encode() == text
    with pytest.raises(ValueError):
        DualSet.decode("B1:P3", g)


def test_transitions_of_center_plus_one_vertex(star1):
    # mu(v0) = 1, mu(branch vertex k) = 2^-(k+1); mu(Q) = 3/2
    g, m = star1
    Q = DualSet.make(g, 1, {0: 0})
    r = _rates(Q, m)
    assert r["C:1;B1:P1;B2:-;B3:-"] == pytest.approx(14 / 3, rel=1e-13)
    assert r["C:1;B1:P0;B2:P0;B3:-"] == pytest.approx(8 / 3, rel=1e-13)
    assert r["C:1;B1:P0;B2:-;B3:P0"] == pytest.approx(8 / 3, rel=1e-13)
    assert r["C:1;B1:-;B2:-;B3:-"] == pytest.approx(4 / 3, rel=1e-13)
    assert r["C:0;B1:S0-0;B2:-;B3:-"] == pytest.approx(2 / 3, rel=1e-13)
    assert len(r) == 5


def test_singleton_only_grows(star1):
    g, m = star1
    Q = GD.singleton(g, 0)
    for t, _ in GD.dual_transitions(Q, m):
        assert sum(e != EMPTY for e in t.ext) == 1 and t.mask == 1


def test_center_removal_total(star1):
    g, m = star1
    Q = DualSet.make(g, 1, {0: 2, 1: 1})
    moves = [(t, r) for t, r in GD.dual_transitions(Q, m) if t.mask == 0]
    assert len(moves) == 2
    lq = m.log_mass(Q)
    comp = sum(math.exp(m.log_mass(t) - lq) for t, _ in moves)
    out_rate = g.branches[2].out0  # the only edge from v0 leaving Q
    assert sum(r for _, r in moves) == pytest.approx(comp * out_rate, rel=1e-10)


def test_full_set_is_absorbing(star1):
    g, m = star1
    assert GD.GraphDual(m).row(GD.full_set(g)) == []


def test_fan_out_bound(star1):
    g, m = star1
    nc, N = len(g.center), g.n_branches
    full = GD.full_set(g)
    worst = max(len(GD.dual_transitions(Q, m)) for Q in GD.enumerate_sets(g, 5) if Q != full)
    assert worst <= GK.max_candidates(nc, N)


def test_residual_mixed_star():
    g = star_graph([F1, F2, F1])
    m = GD.GraphDualModel(g)
    sets = GD.enumerate_sets(g, 4)
    rep = algebraic_residual(GD.GraphPrimal(m), GD.GraphDual(m), GD.GraphKernel(m), sets, reach=6)
    assert rep.interior_max < 1e-9


def test_kernel_rows_sum_to_one(star1):
    g, m = star1
    kern = GD.GraphKernel(m)
    for Q in [DualSet.make(g, 1, {0: FULL}), DualSet(0, (EMPTY,) * 3, (1, 2, None)),
              DualSet.make(g, 1, {0: 3, 2: 1})]:
        tot = sum(kern.prob(Q, x) for x in kern.support_points(Q, 400))
        assert tot == pytest.approx(1.0, abs=1e-12)


def test_branch_comparison_matches_interval_comparison():
    # Z seen as a graph: branch 0 vertex k is state k+1, so G^0_p = (-inf, p+1]
    g = line_as_graph(F2)
    lc = GD.branch_comparison(0, None, g, depth=20)
    im = IntervalModel(F2)
    for p in range(0, 20):
        up, down = comparison_rates(p + 1, im)
        assert lc.up[p] == pytest.approx(up, rel=1e-12)
        if p > 0:
            assert lc.down[p] == pytest.approx(down, rel=1e-12)


def test_segment_comparison_has_no_down_move_at_start(star1):
    g, m = star1
    c = GD.branch_comparison(1, 3, m, depth=10)
    assert c.down[0] == 0.0 and np.all(c.down[1:] > 0)


def test_comparison_dominated_by_dual_growth():
    g = star_graph([F1, F2, F1])
    m = GD.GraphDualModel(g)
    lc = GD.branch_comparison(1, None, m, depth=50)
    for p in range(0, 51):
        Q = DualSet.make(g, 1, {0: FULL, 1: p, 2: FULL})
        grow = DualSet.make(g, 1, {0: FULL, 1: p + 1, 2: FULL})
        rate = dict(GD.dual_transitions(Q, m))[grow]
        assert rate >= lc.up[p] * (1 - 1e-12)


def test_kernel_matches_python_reference(star1):
    g, m = star1
    Q0 = GD.singleton(g, 0)
    pol = ExplosionPolicy(M=10**6)
    for s in range(10):
        sd = SeedSpec(7, s)
        tr = GD.simulate_dual_graph(m, Q0, 0.1, pol, sd)
        ref = simulate_minimal(GD.GraphDual(m), Q0, 0.1, 3000, sd,
                               stream=UniformStream(sd, DUAL))
        # the reference works with linear rates, which overflow past depth ~1000 on F1
        n = next((k for k, q in enumerate(ref.states) if max(q.ext) > 1000), len(ref.states))
        assert tr.states[:n] == ref.states[:n]
        np.testing.assert_allclose(tr.times[:n], ref.times[:n], rtol=1e-12)


def test_full_init_absorbed_at_zero(star1):
    g, m = star1
    tr = GD.simulate_dual_graph(m, GD.full_set(g), 1.0, ExplosionPolicy(M=64), SeedSpec(0))
    assert tr.absorption_time == 0.0


def test_divergent_branch_never_gains_delta():
    g = star_graph([F1, F2, F1])
    m = GD.GraphDualModel(g)
    b = GD.run_graph_trials(m, 100, 100.0, ExplosionPolicy(M=64), 3, GD.singleton(g, 0))
    assert b.delta_count(1) == 0
    assert b.delta_count(0) == 100 and b.delta_count(2) == 100
    assert not b.absorbed.any()


def test_graph_batch_independent_of_threads(star1):
    g, m = star1
    pol = ExplosionPolicy(M=64)
    a = GD.run_graph_trials(m, 200, 1e3, pol, 4, GD.singleton(g, 0), threads=1)
    b = GD.run_graph_trials(m, 200, 1e3, pol, 4, GD.singleton(g, 0), threads=3)
    assert np.array_equal(a.absorption_time, b.absorption_time, equal_nan=True)
    assert [q.encode() for q in a.final] == [q.encode() for q in b.final]
