"""Existence criteria, separation curves and Monte Carlo experiments.

* ``criterion``: the double series deciding whether the dual reaches the
  full state in finite time, per side of Z or per branch of a graph;
* ``separation_curve``: separation s(t) of the primal from a finite
  truncation, with the excluded stationary mass reported;
* ``sst_experiment``: coupled runs giving the absorption time T and the
  primal state X_T, compared with mu and with s(t);
* ``martingale_test`` and ``intertwining_test``: the two Monte Carlo
  invariants of the dual construction.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import graph_dual as GD
from .ctmc import BDOracle, FiniteGenerator, simulate_minimal, transient_distribution, truncate_bd
from .errors import NotLambdaCompatible, ValidationError, WindowTooSmall
from .interval_dual import (INF, ExplosionPolicy, IntervalDual, IntervalKernel, IntervalModel,
                            IntervalState, run_trials)
from .intertwining import algebraic_residual, simulate_dual_given_primal
from .rng import INIT, SeedSpec, UniformStream
from .series import CONVERGES, DIVERGES, log_series
from .state_space.assumptions import check_assumptions
from .state_space.graph import BranchVertex, GraphModel, half_line
from .state_space.measure import LineMeasure
from .state_space.rates import BDRates

VERDICTS = {CONVERGES: "Converges", DIVERGES: "Diverges"}
INCONCLUSIVE = "Inconclusive"

CRITERION_REL_TOL = 1e-13
CRITERION_RUN = 10


# -- criterion ---------------------------------------------------------------

@dataclass
class CriterionReport:
    """One side of Z or one branch: sum_{j>=1} mu(j+1) sum_{k=1}^{j} 1/(mu(k) c_k),
    with mu normalized at the base vertex and c_k the outward rate of edge k."""

    part: str
    verdict: str
    value: float
    n_terms: int
    terms: np.ndarray             # first terms (up to ``record``)
    partial_sums: np.ndarray
    log_tail_estimate: float
    ratio: float


@dataclass
class CriterionSummary:
    parts: list
    verdict: str
    flagged: bool                 # a standing assumption failed
    assumptions: dict

    @property
    def value(self) -> float:
        """Largest series value over the parts (inf once one diverges)."""
        if any(p.verdict == "Diverges" for p in self.parts):
            return math.inf
        return max((p.value for p in self.parts), default=0.0)

    def part(self, name: str) -> CriterionReport:
        for p in self.parts:
            if p.part == name:
                return p
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "value": self.value, "flagged": self.flagged,
                "assumptions": self.assumptions,
                "parts": [{"part": p.part, "verdict": p.verdict, "value": p.value,
                           "n_terms": p.n_terms, "ratio": p.ratio,
                           "log_tail_estimate": p.log_tail_estimate} for p in self.parts]}


def half_line_series(h: BDRates, part: str = "half-line", *, max_terms: int = 10**6,
                     record: int = 1000) -> CriterionReport:
    """Evaluate the criterion series of a half-line family (vertex 0 = base)."""
    state = {"lm": 0.0, "inner": -math.inf}
    rec = []

    def chunk(i, m):
        # terms j = i+1 .. i+m (log_series counts from 0)
        j = np.arange(i + 1, i + m + 1)
        # log mu(k) for k = j, then j+1, built from the running value at j-1
        lb_prev = h.log_birth(j - 1)
        la = h.log_death(j)
        lm_j = state["lm"] + np.cumsum(lb_prev - la)
        lm_next = lm_j + h.log_birth(j) - h.log_death(j + 1)
        inner = np.logaddexp.accumulate(np.concatenate([[state["inner"]],
                                                        -lm_j - h.log_birth(j)]))[1:]
        state["lm"] = float(lm_j[-1])
        state["inner"] = float(inner[-1])
        lt = lm_next + inner
        if len(rec) < record:
            rec.extend(lt[:record - len(rec)].tolist())
        return lt

    res = log_series(chunk, rel_tol=CRITERION_REL_TOL, run=CRITERION_RUN, max_terms=max_terms,
                     chunk_size=256, min_terms=200)
    terms = np.exp(np.asarray(rec[:res.n_terms]))
    verdict = VERDICTS.get(res.verdict, INCONCLUSIVE)
    return CriterionReport(part, verdict, res.value, res.n_terms, terms, np.cumsum(terms),
                           float(res.log_tail_estimate), res.ratio)


def _halves(model):
    if isinstance(model, BDRates):
        out = []
        if model.hi is None:
            out.append(("right", half_line(model, "right")))
        if model.lo is None:
            out.append(("left", half_line(model, "left")))
        return out
    if isinstance(model, GD.GraphDualModel):
        model = model.graph
    if isinstance(model, GraphModel):
        return [(f"branch{i + 1}", b.rates) for i, b in enumerate(model.branches)]
    raise TypeError(f"no criterion for {type(model).__name__}")


def criterion(model, part: str | None = None, *, max_terms: int = 10**6,
              record: int = 1000) -> CriterionSummary:
    """Criterion per side ("right", "left") or branch ("branch1", ...).

    Converges when 10 consecutive relative increments fall below 1e-13;
    Diverges when the terms stop decreasing; otherwise Inconclusive.
    Sides with finite support need no explosion and are omitted. The
    summary is flagged when a standing assumption fails.
    """
    halves = _halves(model)
    if part is not None:
        halves = [(n, h) for n, h in halves if n == part]
        if not halves:
            raise ValidationError(f"model has no part {part!r}")
    parts = [half_line_series(h, n, max_terms=max_terms, record=record) for n, h in halves]
    verdicts = {p.verdict for p in parts}
    if not parts or verdicts == {"Converges"}:
        verdict = "Converges"
    elif "Diverges" in verdicts:
        verdict = "Diverges"
    else:
        verdict = INCONCLUSIVE
    g = model.graph if isinstance(model, GD.GraphDualModel) else model
    rep = check_assumptions(g)
    return CriterionSummary(parts, verdict, not rep.ok, rep.to_dict())


# -- finite truncations --------------------------------------------------------

@dataclass
class Truncation:
    gen: FiniteGenerator
    states: tuple
    log_mu: np.ndarray            # log stationary weights (normalized over the whole space)
    tail_mass: float              # stationary mass outside the truncation


def truncate(model, window) -> Truncation:
    """Reflecting truncation of a chain on Z (``window = (lo, hi)``) or on a
    graph (``window = depth`` along every branch)."""
    if isinstance(model, BDRates):
        lo, hi = (int(window[0]), int(window[1]))
        lo = lo if model.lo is None else max(lo, model.lo)
        hi = hi if model.hi is None else min(hi, model.hi)
        mu = LineMeasure(model, (lo, hi))
        lm = np.asarray(mu.log_mu(np.arange(lo, hi + 1))) - mu.log_total
        return Truncation(truncate_bd(model, (lo, hi)), tuple(range(lo, hi + 1)), lm,
                          mu.tail_mass_outside(lo, hi))
    m = GD._gmodel(model)
    g = m.graph
    depth = int(window)
    m.ensure_depth(depth + 2)
    states = list(range(len(g.center)))
    states += [BranchVertex(i, k) for i in range(g.n_branches) for k in range(depth + 1)]
    index = {s: n for n, s in enumerate(states)}
    prim = GD.GraphPrimal(m)
    q = np.zeros((len(states), len(states)))
    for s, n in index.items():
        for y, r in prim.row(s):
            if y in index:
                q[n, index[y]] = r
        q[n, n] = -q[n].sum()
    lm = np.array([m.log_mu_vertex(s) for s in states]) - m.measure.log_total
    return Truncation(FiniteGenerator(q, tuple(states)), tuple(states), lm,
                      float(max(-math.expm1(np.logaddexp.reduce(lm)), 0.0)))


@dataclass
class DualityCheck:
    residual: float               # max interior |L* Lambda - Lambda L|
    boundary_residual: float      # rows touching the edge of a finite support
    n_rows: int
    n_states: int
    worst: object
    precision: str


def duality_residual(model, window=(-20, 20), *, precision: str | None = None) -> DualityCheck:
    """Algebraic intertwining residual over every dual state inside ``window``.

    On Z the states are all intervals [p, q] with lo <= p <= q <= hi plus
    the half-lines (-inf, q] and [p, +inf); rates and Lambda are evaluated
    in extended precision by default. On a graph ``window`` is a branch
    depth and all connected sets reaching at most that depth are checked.
    """
    if isinstance(model, BDRates):
        precision = precision or "extended"
        lo, hi = int(window[0]), int(window[1])
        lo = lo if model.lo is None else max(lo, model.lo)
        hi = hi if model.hi is None else min(hi, model.hi)
        m = IntervalModel(model)
        states = [IntervalState(p, q) for p in range(lo, hi + 1) for q in range(p, hi + 1)]
        if model.lo is None:
            states += [IntervalState(-INF, q) for q in range(lo, hi + 1)]
        if model.hi is None:
            states += [IntervalState(p, INF) for p in range(lo, hi + 1)]
        rep = algebraic_residual(BDOracle(model, precision), IntervalDual(m, precision),
                                 IntervalKernel(m, precision), states,
                                 reach=max(abs(lo), abs(hi)) + 4)
    else:
        precision = precision or "double"
        m = GD._gmodel(model)
        depth = int(window)
        states = GD.enumerate_sets(m.graph, depth)
        rep = algebraic_residual(GD.GraphPrimal(m), GD.GraphDual(m), GD.GraphKernel(m),
                                 states, reach=depth + 2)
    return DualityCheck(float(rep.interior_max), float(rep.boundary_max), rep.n_interior,
                        len(states), rep.worst, precision)


def _initial_vector(tr: Truncation, model, mu0) -> tuple[np.ndarray, float]:
    """Normalized initial law on the truncation and its mass left outside."""
    n = len(tr.states)
    index = {s: k for k, s in enumerate(tr.states)}
    v = np.zeros(n)
    if mu0 == "stationary":
        v = np.exp(tr.log_mu)
        return v / v.sum(), tr.tail_mass
    kind, arg = mu0
    if kind == "point":
        if arg not in index:
            raise WindowTooSmall(f"initial point {arg} outside the truncation")
        v[index[arg]] = 1.0
        return v, 0.0
    if kind == "restricted":
        kern = _kernel(model)
        Q = arg if not isinstance(model, BDRates) else IntervalState.make(*arg)
        inside = [s for s in tr.states if s in Q]
        lw = np.array([kern.log_prob(Q, s) for s in inside])
        for s, w in zip(inside, lw):
            v[index[s]] = math.exp(w)
        out = max(1.0 - v.sum(), 0.0)
        return v / v.sum(), out
    raise ValidationError(f"unknown initial law {mu0!r}")


def _kernel(model):
    if isinstance(model, BDRates):
        return IntervalKernel(model)
    return GD.GraphKernel(model)


# -- separation --------------------------------------------------------------

@dataclass
class SeparationCurve:
    t: np.ndarray
    s: np.ndarray
    window: object
    tail_mass: float              # stationary mass outside the window
    init_tail_mass: float         # initial mass outside the window


def separation_curve(model, mu0, t_grid, window=(-40, 40), *,
                     tail_bound: float = 1e-10) -> SeparationCurve:
    """s(t) = sup_m (1 - mu_t(m)/mu(m)) over the window states.

    ``mu0`` is ``"stationary"``, ``("point", x)`` or ``("restricted", Q)``
    (mu restricted to the dual state Q). Raises WindowTooSmall when the
    stationary or initial mass outside the window exceeds ``tail_bound``.
    """
    tr = truncate(model, window)
    if tr.tail_mass > tail_bound:
        raise WindowTooSmall(f"stationary mass {tr.tail_mass:.3g} outside window {window} "
                             f"exceeds {tail_bound:g}")
    v, out0 = _initial_vector(tr, model, mu0)
    if out0 > tail_bound:
        raise WindowTooSmall(f"initial mass {out0:.3g} outside window {window}")
    t_grid = np.asarray(t_grid, dtype=float)
    order = np.argsort(t_grid, kind="stable")
    mu = np.exp(tr.log_mu)
    s = np.empty(t_grid.shape[0])
    cur, t_cur = v, 0.0
    for k in order:
        t = float(t_grid[k])
        if t > t_cur:
            cur = np.maximum(transient_distribution(tr.gen, cur, t - t_cur), 0.0)
            t_cur = t
        s[k] = float(np.max(1.0 - cur / mu))
    return SeparationCurve(t_grid, s, window, tr.tail_mass, out0)


# -- absorption statistics ---------------------------------------------------

def wilson_sigma(k, n):
    """Half-width of the one-sigma Wilson score interval for k successes in n."""
    k = np.asarray(k, dtype=float)
    p = k / n
    return np.sqrt(p * (1 - p) / n + 1.0 / (4 * n * n)) / (1 + 1.0 / n)


@dataclass
class AbsorptionStats:
    times: np.ndarray             # sorted absorption times of absorbed trials
    n_trials: int
    n_absorbed: int
    t_grid: np.ndarray
    survival: np.ndarray          # P^(T > t)
    ci: np.ndarray                # one-sigma Wilson half-width
    ci_level: str = "wilson-1sigma"

    @classmethod
    def from_times(cls, tabs: np.ndarray, t_grid) -> "AbsorptionStats":
        tabs = np.asarray(tabs, dtype=float)
        n = tabs.shape[0]
        done = np.sort(tabs[~np.isnan(tabs)])
        t_grid = np.asarray(t_grid, dtype=float)
        # non-absorbed trials count as T > t
        surv_k = n - np.searchsorted(done, t_grid, side="right")
        return cls(done, n, int(done.shape[0]), t_grid, surv_k / n, wilson_sigma(surv_k, n))

    def cdf(self, t) -> np.ndarray:
        return np.searchsorted(self.times, np.asarray(t, float), side="right") / self.n_trials


@dataclass
class ChiSquare:
    statistic: float
    dof: int
    pvalue: float
    n: int
    bins: int


def chi_square(samples, states, probs) -> ChiSquare:
    """Goodness of fit of ``samples`` to ``probs`` over ``states``: bins with
    expected count >= 5, all remaining mass (including outside ``states``)
    pooled into one bin."""
    samples = list(samples)
    n = len(samples)
    probs = np.asarray(probs, dtype=float)
    exp = n * probs
    keep = exp >= 5
    index = {s: k for k, s in enumerate(states)}
    counts = np.zeros(len(states))
    other = 0
    for x in samples:
        k = index.get(x)
        if k is None:
            other += 1
        else:
            counts[k] += 1
    obs = list(counts[keep])
    expv = list(exp[keep])
    rest_obs = other + counts[~keep].sum()
    rest_exp = n - exp[keep].sum()
    if rest_exp > 0:
        obs.append(rest_obs)
        expv.append(rest_exp)
    obs, expv = np.asarray(obs), np.asarray(expv)
    expv *= n / expv.sum()
    stat, p = stats.chisquare(obs, expv)
    return ChiSquare(float(stat), len(obs) - 1, float(p), n, len(obs))


# -- SST experiment ----------------------------------------------------------

T_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass
class SSTResult:
    stats: AbsorptionStats
    chi2: ChiSquare | None
    separation: SeparationCurve | None
    bound_ok: np.ndarray          # s(t) <= P^(T > t) + 3 CI per grid point
    sharp_gap: np.ndarray         # |s(t) - P^(T > t)| / CI
    meta: dict = field(default_factory=dict)

    @property
    def bound_holds(self) -> bool:
        return bool(np.all(self.bound_ok))

    def sharp_within(self, k: float = 3.0) -> bool:
        return bool(np.all(self.sharp_gap <= k))

    def report_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# schema: sstlab.sst/1\n")
        buf.write("t,separation,survival,ci\n")
        s = self.separation.s if self.separation is not None else [float("nan")] * len(
            self.stats.t_grid)
        for t, sv, p, c in zip(self.stats.t_grid, s, self.stats.survival, self.stats.ci):
            buf.write(f"{float(t)!r},{float(sv)!r},{float(p)!r},{float(c)!r}\n")
        return buf.getvalue()

    def summary(self) -> dict:
        out = {"n_trials": self.stats.n_trials, "n_absorbed": self.stats.n_absorbed,
               "bound_holds": self.bound_holds, "ci_level": self.stats.ci_level,
               "max_sharp_gap_sigmas": float(np.max(self.sharp_gap)) if len(self.sharp_gap) else None}
        if self.chi2 is not None:
            out["chi2"] = asdict(self.chi2)
        if self.separation is not None:
            out["separation_tail_mass"] = self.separation.tail_mass
        out.update(self.meta)
        return out


def _compat_interval(mu0, init):
    """Normalize (mu0, init) for the interval dual; NotLambdaCompatible if
    mu0 differs from mu0* Lambda."""
    kind, arg = mu0
    if kind == "point":
        x = int(arg)
        if init in (None, "singleton") or IntervalState.make(*init) == IntervalState(x, x):
            return ("point", x), "singleton"
        raise NotLambdaCompatible(f"delta_{x} is not Lambda of the dual state {init}")
    if kind == "restricted":
        Q = IntervalState.make(*arg)
        if init is None or IntervalState.make(*init) == Q:
            return ("restricted", Q), Q
        raise NotLambdaCompatible(f"mu restricted to {Q} is not Lambda of {init}")
    raise ValidationError(f"unknown initial law {mu0!r}")


def sst_experiment(model, mu0, init=None, *, trials: int = 10**4, horizon: float = 1e3,
                   seed: int = 0, t_grid=T_GRID, policy: ExplosionPolicy | None = None,
                   window=(-40, 40), chi_window=(-25, 25), threads: int = 1,
                   separation: bool = True) -> SSTResult:
    """Coupled runs (X, X*) from a Lambda-compatible start, stopped at absorption.

    On Z, ``mu0`` is ``("point", x)`` (dual starts at {x}) or
    ``("restricted", Q)`` (X_0 ~ mu restricted to Q, dual starts at Q).
    On a graph, ``mu0`` is ``("point", v)`` with the dual at {v}, or
    ``("restricted", Q)`` with a DualSet Q; ``window`` and ``chi_window``
    are then branch depths.
    """
    policy = policy or ExplosionPolicy(M=64)
    if isinstance(model, BDRates):
        mu0, init = _compat_interval(mu0, init)
        im = IntervalModel(model)
        batch = run_trials(im, trials, horizon, policy, seed, init=init, coupled=True,
                           mu0=mu0, stop_at_absorption=True, threads=threads)
        tabs = batch.absorption_time
        n_censored = int(batch.censored.sum())
        xT = batch.final_x[batch.absorbed].tolist()
        lo, hi = chi_window
        states = list(range(int(lo), int(hi) + 1))
        lmu = np.asarray(im.mu.log_mu(np.arange(lo, hi + 1))) - im.mu.log_total
    else:
        m = GD._gmodel(model)
        tabs, xT = _graph_coupled(m, mu0, init, trials, horizon, seed, policy)
        n_censored = 0
        depth = int(chi_window if np.ndim(chi_window) == 0 else chi_window[1])
        tr = truncate(m, depth)
        states, lmu = list(tr.states), tr.log_mu
        if np.ndim(window):
            window = 40
    st = AbsorptionStats.from_times(tabs, t_grid)
    chi = chi_square(xT, states, np.exp(lmu)) if xT else None
    sep = None
    bound_ok = np.ones(len(st.t_grid), dtype=bool)
    gap = np.zeros(len(st.t_grid))
    if separation:
        sep = separation_curve(model, mu0, t_grid, window)
        bound_ok = sep.s <= st.survival + 3 * st.ci
        gap = np.abs(sep.s - st.survival) / st.ci
    return SSTResult(st, chi, sep, bound_ok, gap,
                     meta={"seed": seed, "trials": trials, "horizon": horizon,
                           "n_censored": n_censored,
                           "policy": {"M": policy.M, "delta": policy.delta,
                                      "jump_budget": policy.jump_budget,
                                      "window_cap": policy.window_cap}})


def _graph_coupled(m: GD.GraphDualModel, mu0, init, trials, horizon, seed, policy):
    """Generic coupled construction on a graph (primal path first, dual along it)."""
    kind, arg = mu0
    g = m.graph
    if kind == "point":
        Q0 = GD.singleton(g, arg)
        if init is not None and init != Q0:
            raise NotLambdaCompatible(f"delta_{arg} is not Lambda of {init}")
    elif kind == "restricted":
        Q0 = arg
        if init is not None and init != Q0:
            raise NotLambdaCompatible("mu0 must be Lambda of the initial dual state")
    else:
        raise ValidationError(f"unknown initial law {mu0!r}")
    kern = GD.GraphKernel(m)
    prim = GD.GraphPrimal(m)
    dual = GD.GraphDual(m)
    tabs = np.full(trials, np.nan)
    xT = []
    for k in range(trials):
        sd = SeedSpec(seed, k)
        x0 = arg if kind == "point" else _draw_graph(kern, Q0, UniformStream(sd, INIT, block=8))
        path = simulate_minimal(prim, x0, horizon, 10**7, sd)
        ct = simulate_dual_given_primal(path, Q0, prim, dual, kern, sd, policy=policy,
                                        stop_at_absorption=True)
        if ct.absorption_time is not None:
            tabs[k] = ct.absorption_time
            xT.append(ct.primal[-1])
    return tabs, xT


def _draw_graph(kern, Q, u: UniformStream, reach: int = 200):
    pts = kern.support_points(Q, reach)
    w = np.exp([kern.log_prob(Q, x) for x in pts])
    target = u.next() * w.sum()
    return pts[min(int(np.searchsorted(np.cumsum(w), target, side="right")), len(pts) - 1)]


# -- Monte Carlo invariants ----------------------------------------------------

@dataclass
class MartingaleResult:
    mean: float
    se: float
    n: int
    K: int
    t: float

    @property
    def z(self) -> float:
        return self.mean / self.se if self.se > 0 else 0.0


def martingale_test(model, init, *, K: int = 4, t: float = 1.0, trials: int = 10**5,
                    seed: int = 0, policy: ExplosionPolicy | None = None,
                    threads: int = 1) -> MartingaleResult:
    """Mean of f(X*_t) - f(X*_0) - int_0^t (L* f)(X*_s) ds over independent runs,
    with f(Q) = min(|Q ∩ B_K|, K) (B_K = [-K, K] on Z; center plus K
    vertices per branch on a graph)."""
    policy = policy or ExplosionPolicy(M=64)
    if isinstance(model, BDRates) or isinstance(model, IntervalModel):
        b = run_trials(model, trials, t, policy, seed, init=init, martingale_K=K,
                       stop_at_absorption=True, threads=threads)
        v = b.martingale
    else:
        b = GD.run_graph_trials(model, trials, t, policy, seed, init, martingale_K=K,
                                threads=threads)
        v = b.martingale
    return MartingaleResult(float(np.mean(v)), float(np.std(v, ddof=1) / math.sqrt(len(v))),
                            len(v), K, t)


@dataclass
class IntertwiningRow:
    state: IntervalState
    hits: int
    tv: float
    bound: float

    @property
    def ok(self) -> bool:
        return self.tv <= self.bound


def intertwining_test(rates: BDRates, x0: int = 0, *, t: float = 0.5, trials: int = 10**5,
                      seed: int = 0, min_hits: int = 500, policy: ExplosionPolicy | None = None,
                      threads: int = 1) -> list[IntertwiningRow]:
    """Law of X_t given X*_t = Q against Lambda(Q, .), from coupled runs
    started at (x0, {x0}).

    For each Q hit at least ``min_hits`` times the bound is the sum of
    per-cell three-sigma deviations, (1/2) sum_m 3 sqrt(p_m (1 - p_m) / n),
    over the states of Q (mass beyond them pooled into one cell).
    """
    policy = policy or ExplosionPolicy(M=64)
    im = IntervalModel(rates)
    b = run_trials(im, trials, t, policy, seed, init="singleton", coupled=True,
                   mu0=("point", x0), stop_at_absorption=False, threads=threads)
    groups: dict = {}
    for Q, x in zip(b.final_states(), b.final_x):
        groups.setdefault(Q, []).append(int(x))
    kern = IntervalKernel(im)
    out = []
    for Q in sorted(groups, key=lambda s: (s.p, s.q)):
        xs = groups[Q]
        n = len(xs)
        if n < min_hits:
            continue
        pts = list(kern.support_points(Q, 200))
        p = np.array([kern.prob(Q, x) for x in pts])
        rest = max(1.0 - p.sum(), 0.0)
        counts = np.zeros(len(pts))
        idx = {x: k for k, x in enumerate(pts)}
        other = 0
        for x in xs:
            k = idx.get(x)
            if k is None:
                other += 1
            else:
                counts[k] += 1
        ph = np.append(counts / n, other / n)
        pp = np.append(p, rest)
        tv = 0.5 * float(np.abs(ph - pp).sum())
        bound = 0.5 * float(np.sum(3 * np.sqrt(pp * (1 - pp) / n)))
        out.append(IntertwiningRow(Q, n, tv, bound))
    return out


# -- reports -----------------------------------------------------------------

def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return [_jsonable(v) for v in o.tolist()]
    if isinstance(o, np.generic):
        o = o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return "nan" if math.isnan(o) else ("inf" if o > 0 else "-inf")
    if isinstance(o, (str, int, float, bool)) or o is None:
        return o
    if hasattr(o, "encode") and not isinstance(o, bytes):
        return o.encode()
    raise TypeError(f"not serializable: {type(o).__name__}")


def dumps_json(obj) -> str:
    """Deterministic strict JSON: sorted keys, shortest-repr floats, numpy
    values unwrapped, states encoded, non-finite floats as "inf"/"-inf"/"nan"."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"
