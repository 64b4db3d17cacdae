import json
import math
from fractions import Fraction

import numpy as np
import pytest

from sstlab.analysis import (AbsorptionStats, chi_square, criterion, dumps_json,
                             duality_residual, separation_curve, sst_experiment, wilson_sigma)
from sstlab.errors import WindowTooSmall
from sstlab.state_space import F1, F2, TableRates, star_graph


def exact_terms(births, deaths, n):
    """Criterion terms sum_{k<=j} mu(j+1)/(mu(k) b_k) in exact rationals."""
    mu = [Fraction(1)]
    for k in range(1, n + 2):
        mu.append(mu[-1] * Fraction(births(k - 1)) / Fraction(deaths(k)))
    out, inner = [], Fraction(0)
    for j in range(1, n + 1):
        inner += 1 / (mu[j] * births(j))
        out.append(mu[j + 1] * inner)
    return out


def test_f1_series_matches_exact_and_sums_to_one():
    rep = criterion(F1)
    assert rep.verdict == "Converges" and rep.flagged
    want = exact_terms(lambda k: 2 ** k, lambda k: 2 ** k, 60)
    for side in ("right", "left"):
        p = rep.part(side)
        n = min(len(p.terms), 60)
        assert n > 50
        np.testing.assert_allclose(p.terms[:n], [float(w) for w in want[:n]], rtol=1e-12)
        k = int(np.argmax(np.abs(p.partial_sums - 1) <= 1e-12))
        assert abs(p.partial_sums[k] - 1) <= 1e-12 and k < 100
    assert rep.value == pytest.approx(1.0, abs=1e-12)


def test_f2_terms_and_divergence():
    rep = criterion(F2)
    assert rep.verdict == "Diverges" and not rep.flagged and rep.value == math.inf
    want = exact_terms(lambda k: 1, lambda k: 2, 40)
    assert want[:3] == [Fraction(1, 2), Fraction(3, 4), Fraction(7, 8)]
    p = rep.part("right")
    np.testing.assert_allclose(p.terms[:40], 1 - 2.0 ** -np.arange(1, 41), rtol=1e-14)


def test_criterion_per_branch():
    rep = criterion(star_graph([F1, F2, F1]))
    assert [p.verdict for p in rep.parts] == ["Converges", "Diverges", "Converges"]
    assert rep.verdict == "Diverges"


def test_finite_support_needs_no_criterion():
    t = TableRates(-3, [1.0] * 7, [2.0] * 7)
    assert criterion(t).verdict == "Converges" and criterion(t).parts == []


def test_duality_residual_small():
    assert duality_residual(F2, (-8, 8)).residual < 1e-9
    assert duality_residual(star_graph([F1, F1]), 4).residual < 1e-9


def test_wilson_sigma_values():
    assert wilson_sigma(0, 100) > 0
    # symmetric in k <-> n - k, close to the Wald width in the bulk
    assert wilson_sigma(30, 100) == pytest.approx(wilson_sigma(70, 100))
    assert wilson_sigma(5000, 10**4) == pytest.approx(0.005, rel=1e-3)


def test_chi_square_pools_small_bins():
    rng = np.random.default_rng(1)
    probs = np.array([0.5, 0.3, 0.196, 0.003, 0.001])
    xs = rng.choice(5, size=1000, p=probs)
    res = chi_square(xs, list(range(5)), probs)
    assert res.bins == 4 and res.dof == 3
    assert res.pvalue > 1e-3
    bad = chi_square(np.zeros(1000, dtype=int), list(range(5)), probs)
    assert bad.pvalue < 1e-10


def test_absorption_stats_counts_unabsorbed_as_surviving():
    st = AbsorptionStats.from_times(np.array([0.5, np.nan, 1.5, np.nan]), [1.0, 2.0])
    np.testing.assert_allclose(st.survival, [0.75, 0.5])
    assert st.n_absorbed == 2


def test_separation_stationary_start_is_zero():
    c = separation_curve(F2, "stationary", [0.5, 1.0])
    assert np.max(np.abs(c.s)) < 1e-9


def test_separation_point_start():
    c = separation_curve(F1, ("point", 0), [0.0, 1.0, 4.0])
    assert c.s[0] == pytest.approx(1.0)
    assert 1 > c.s[1] > c.s[2] > 0


def test_separation_window_size():
    grid = [0.5, 1.0, 2.0]
    wide = separation_curve(F1, ("point", 0), grid)
    narrow = separation_curve(F1, ("point", 0), grid, window=(-30, 30), tail_bound=1e-8)
    np.testing.assert_allclose(narrow.s, wide.s, atol=1e-8)
    with pytest.raises(WindowTooSmall):
        separation_curve(F1, ("point", 0), grid, window=(-30, 30))


def test_sst_bound_holds_for_point_start():
    res = sst_experiment(F2, ("point", 0), trials=2000, seed=3, separation=True)
    assert res.bound_holds
    # separation is monotone and survival stays below one
    assert np.all(np.diff(res.separation.s) <= 0)


def test_sst_sharp_small_run():
    res = sst_experiment(F1, ("restricted", (None, 0)), trials=3000, seed=5, threads=2)
    assert res.bound_holds and res.sharp_within(4.0)
    assert res.chi2.pvalue > 1e-3


def test_dumps_json_is_strict():
    text = dumps_json({"a": math.inf, "b": np.float64(1.5), "c": [np.nan]})
    assert json.loads(text) == {"a": "inf", "b": 1.5, "c": ["nan"]}
