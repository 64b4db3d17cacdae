"""Strong stationary dual of a birth-death chain on Z, on intervals.

Dual states are intervals ``[p, q]`` with ``p`` possibly ``-inf`` and ``q``
possibly ``+inf``. From ``[p, q]`` the dual grows or shrinks by one point at
either end; with ``mu(Q)`` the stationary mass of ``Q``:

* grow left   ``mu([p-1,q])/mu([p,q]) * b_{p-1}``
* grow right  ``mu([p,q+1])/mu([p,q]) * a_{q+1}``
* shrink left ``mu([p+1,q])/mu([p,q]) * a_p``
* shrink right ``mu([p,q-1])/mu([p,q]) * b_q``

A singleton has no shrink moves (the mass ratio is 0). Strata are indexed
by the number of infinite endpoints (0, 1, 2); an explosion of an endpoint
moves the process one stratum up, and the whole line is absorbing.
"""

from __future__ import annotations

import io
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _interval_kernels as K
from .errors import AbsorbedState, EmptyIntersection, InconsistentInput
from .rng import DUAL, INIT, PRIMAL, SeedSpec, UniformStream
from .series import CONVERGES, log_series
from .state_space.measure import LineMeasure
from .state_space.rates import BDRates

INF = math.inf


class IntervalState(NamedTuple):
    p: float   # int or -inf
    q: float   # int or +inf

    @classmethod
    def make(cls, p, q) -> "IntervalState":
        p = -INF if p is None or p == -INF else int(p)
        q = INF if q is None or q == INF else int(q)
        if p > q:
            raise ValueError(f"empty interval [{p}, {q}]")
        return cls(p, q)

    @property
    def stratum(self) -> int:
        """0 for E1 (bounded), 1 for E2 (one infinite end), 2 for E3 (= Z)."""
        return int(self.p == -INF) + int(self.q == INF)

    @property
    def is_full(self) -> bool:
        return self.p == -INF and self.q == INF

    def __contains__(self, x) -> bool:
        return self.p <= x <= self.q

    def encode(self) -> str:
        p = "-inf" if self.p == -INF else str(int(self.p))
        q = "+inf" if self.q == INF else str(int(self.q))
        return f"[{p},{q}]"

    def __str__(self) -> str:
        return self.encode()


FULL = IntervalState(-INF, INF)
MOVES = ("grow_left", "grow_right", "shrink_left", "shrink_right")


@dataclass(frozen=True)
class ExplosionPolicy:
    """Finite realization of explosions.

    An endpoint is declared exploded once it is at distance >= ``M`` from 0
    and the expected time to cross all remaining states at the outward base
    rates is below ``delta``.  A run that would need rates at a state
    beyond ``window_cap`` (a far primal excursion, possible when the rates
    are not mu-integrable) stops with status ``WindowCapReached``.
    """

    M: int = 10**4
    delta: float = 1e-9
    jump_budget: int = 10**7
    window_cap: int = 2**20

    def __post_init__(self):
        if self.M < 1 or not self.delta > 0 or self.jump_budget < 1:
            raise ValueError("policy needs M >= 1, delta > 0, jump_budget >= 1")
        if self.window_cap < self.M + 2 * K.N_FF + 8:
            raise ValueError("window_cap must exceed M by the fast-forward pad")


class IntervalModel:
    """Rates plus their stationary measure and explosion tail-time arrays.

    ``TR[k]`` is log of sum_{m >= lo+k} 1/a_{m+1} and ``TL[k]`` log of
    sum_{m <= lo+k} 1/b_{m-1}: upper bounds on the expected time for an
    endpoint to run off to infinity, since the dual grows at least at the
    base rates a_{q+1} and b_{p-1}.
    """

    def __init__(self, rates: BDRates, window: tuple[int, int] = (-64, 64)):
        self.rates = rates
        self.mu = LineMeasure(rates, window)
        self._snap = None
        self._ext = None
        self._lock = threading.Lock()
        self._refresh()

    @property
    def support(self):
        return self.rates.lo, self.rates.hi

    def _beyond(self, start: int, direction: int) -> float:
        r = self.rates
        if (direction > 0 and r.hi is not None) or (direction < 0 and r.lo is not None):
            return INF

        def chunk(i, m):
            n = start + direction * np.arange(i, i + m)
            return -(r.log_death(n) if direction > 0 else r.log_birth(n))

        res = log_series(chunk, max_terms=10**5)
        return res.log_value if res.verdict == CONVERGES else INF

    def _refresh(self) -> None:
        lo, hi, lm, L, R, lb, la, lt, rt = self.mu.arrays()
        n = lm.shape[0]
        if self.rates.finite:
            TL = np.full(n, INF)
            TR = np.full(n, INF)
        else:
            # TR[k] = log(e^TR[n-1] + sum_{j>k} 1/a_j), TL mirrored
            tr = np.concatenate([[self._beyond(hi + 1, +1)], -la[:0:-1]])
            TR = np.logaddexp.accumulate(tr)[::-1].copy()
            tl = np.concatenate([[self._beyond(lo - 1, -1)], -lb[:-1]])
            TL = np.logaddexp.accumulate(tl)
        self._snap = (lo, lm, L, R, lb, la, lt, rt, TL, TR)

    def ensure(self, lo: int, hi: int) -> None:
        self.mu.ensure(lo, hi)
        if self._snap[0] == self.mu.lo and self._snap[1].shape[0] == self.mu.hi - self.mu.lo + 1:
            return
        with self._lock:
            snap = self.mu.arrays()
            if self._snap[0] != snap[0] or self._snap[1].shape != snap[2].shape:
                self._refresh()

    def arrays(self):
        return self._snap

    def extended(self):
        """(lo, lm, L, R, lb, la, rt) in extended precision (np.longdouble).

        Built from the same double log rates as ``arrays``: the model is
        defined by those rates, and identities such as L*Lambda = Lambda L
        can then be checked at absolute tolerances far below the rounding
        noise of doubles at rates of order 2**20.
        """
        lo, lm, L, R, lb, la, lt, rt = self._snap[:8]
        if self._ext is not None and self._ext[0] == lo and self._ext[1].shape == lm.shape:
            return self._ext
        ld = np.longdouble
        lbx, lax = lb.astype(ld), la.astype(ld)
        lmx = np.concatenate([[ld(0)], np.cumsum(lbx[:-1] - lax[1:])])
        lmx -= lmx[self.mu.ref - lo]
        Lx = np.logaddexp.accumulate(np.concatenate([[ld(lt)], lmx]))[1:]
        Rx = np.logaddexp.accumulate(np.concatenate([[ld(rt)], lmx[::-1]]))[1:][::-1]
        self._ext = (lo, lmx, Lx, Rx, lbx, lax, ld(rt))
        return self._ext

    def log_mass_ext(self, p, q, pinf: bool, qinf: bool):
        lo, lm, L, R, lb, la, rt = self.extended()
        if pinf and qinf:
            return np.logaddexp(L[-1], rt)
        if pinf:
            return L[q - lo]
        if qinf:
            return R[p - lo]
        seg = lm[p - lo:q - lo + 1]
        m = seg.max()
        return m + np.log(np.sum(np.exp(seg - m)))

    def ipar(self, policy: ExplosionPolicy, K_mart: int = 0, log_cap: int = 0,
             stop_at_absorption: bool = True) -> np.ndarray:
        r = self.rates
        ip = np.zeros(10, dtype=np.int64)
        ip[K.P_BUDGET] = policy.jump_budget
        ip[K.P_K] = K_mart
        ip[K.P_HASLO] = int(r.lo is not None)
        ip[K.P_SLO] = r.lo if r.lo is not None else 0
        ip[K.P_HASHI] = int(r.hi is not None)
        ip[K.P_SHI] = r.hi if r.hi is not None else 0
        ip[K.P_LOGCAP] = log_cap
        ip[K.P_STOPABS] = int(stop_at_absorption)
        ip[K.P_M] = policy.M
        return ip

    def full_state(self) -> IntervalState:
        r = self.rates
        return IntervalState(-INF if r.lo is None else r.lo, INF if r.hi is None else r.hi)


def _model(rates_or_model, window=(-64, 64)) -> IntervalModel:
    if isinstance(rates_or_model, IntervalModel):
        return rates_or_model
    return IntervalModel(rates_or_model, window)


def _split(s: IntervalState):
    pinf = s.p == -INF
    qinf = s.q == INF
    return (0 if pinf else int(s.p)), (0 if qinf else int(s.q)), pinf, qinf


def dual_rate_terms(s: IntervalState, rates_or_model, mu: LineMeasure | None = None,
                    precision: str = "double") -> dict:
    """All four move rates (zeros included) keyed by move name.

    ``precision="extended"`` evaluates the same formulas in np.longdouble.
    """
    m = _model(rates_or_model) if mu is None else _wrap(rates_or_model, mu)
    s = IntervalState.make(*s)
    if s == m.full_state():
        raise AbsorbedState("no transitions out of the absorbing state")
    p, q, pinf, qinf = _split(s)
    lo_need = (p if not pinf else (q if not qinf else 0)) - 2
    hi_need = (q if not qinf else (p if not pinf else 0)) + 2
    m.ensure(lo_need, hi_need)
    if precision == "extended":
        return _rates_ext(m, p, q, pinf, qinf)
    out = np.empty(4)
    arr = m.arrays()
    K.dual_log_rates(*arr[:8], m.ipar(ExplosionPolicy()), p, q, pinf, qinf, out)
    return {name: float(np.exp(v)) for name, v in zip(MOVES, out)}


def _check_precision(precision: str) -> str:
    if precision not in ("double", "extended"):
        raise ValueError(f"precision must be 'double' or 'extended', not {precision!r}")
    return precision


def _wrap(rates, mu: LineMeasure) -> IntervalModel:
    m = IntervalModel.__new__(IntervalModel)
    m.rates = rates if isinstance(rates, BDRates) else mu.rates
    m.mu = mu
    m._ext = None
    m._refresh()
    return m


def _rates_ext(m: IntervalModel, p, q, pinf, qinf) -> dict:
    lo, lm, L, R, lb, la, rt = m.extended()
    r = m.rates
    zero = np.longdouble(0)
    mq = m.log_mass_ext(p, q, pinf, qinf)
    out = dict.fromkeys(MOVES, zero)
    if not pinf:
        if r.lo is None or p > r.lo:
            k = p - 1 - lo
            out["grow_left"] = np.exp(lb[k]) * (1 + np.exp(lm[k] - mq))
        if qinf or p < q:
            k = p - lo
            out["shrink_left"] = np.exp(la[k]) * -np.expm1(lm[k] - mq)
    if not qinf:
        if r.hi is None or q < r.hi:
            k = q + 1 - lo
            out["grow_right"] = np.exp(la[k]) * (1 + np.exp(lm[k] - mq))
        if pinf or p < q:
            k = q - lo
            out["shrink_right"] = np.exp(lb[k]) * -np.expm1(lm[k] - mq)
    return out


def _target(s: IntervalState, move: str) -> IntervalState:
    p, q = s
    return {"grow_left": IntervalState(p - 1, q), "grow_right": IntervalState(p, q + 1),
            "shrink_left": IntervalState(p + 1, q), "shrink_right": IntervalState(p, q - 1)}[move]


def dual_rates(s: IntervalState, rates_or_model, mu: LineMeasure | None = None,
               precision: str = "double"):
    """Positive-rate moves from ``s`` as (target, rate), in the order
    grow-left, grow-right, shrink-left, shrink-right."""
    s = IntervalState.make(*s)
    terms = dual_rate_terms(s, rates_or_model, mu, precision)
    return [(_target(s, k), v) for k, v in terms.items() if v > 0]


def comparison_rates(n: int, rates_or_model, mu: LineMeasure | None = None):
    """(b~_n, a~_n): rates of the right endpoint of (-inf, n].

    b~_n = mu((-inf,n+1])/mu((-inf,n]) a_{n+1},
    a~_n = mu((-inf,n-1])/mu((-inf,n]) b_n.
    """
    m = _model(rates_or_model) if mu is None else _wrap(rates_or_model, mu)
    t = dual_rate_terms(IntervalState(-INF, int(n)), m)
    return t["grow_right"], t["shrink_right"]


def comparison_rates_left(n: int, rates_or_model, mu: LineMeasure | None = None):
    """Mirror image for the left endpoint of [n, +inf): (grow-left, shrink-left)."""
    m = _model(rates_or_model) if mu is None else _wrap(rates_or_model, mu)
    t = dual_rate_terms(IntervalState(int(n), INF), m)
    return t["grow_left"], t["shrink_left"]


class IntervalDual:
    """Row oracle of the dual generator (for the generic intertwining code)."""

    def __init__(self, rates_or_model, precision: str = "double"):
        self.model = _model(rates_or_model)
        self.precision = _check_precision(precision)

    def row(self, s: IntervalState):
        if s == self.model.full_state():
            return []
        return dual_rates(s, self.model, precision=self.precision)

    def total_rate(self, s) -> float:
        return sum(r for _, r in self.row(s))

    def full_state(self) -> IntervalState:
        return self.model.full_state()

    # explosion hooks for the generic coupled construction (same rules as the kernels)
    def explosion_due(self, s: IntervalState, policy: ExplosionPolicy):
        m = self.model
        for side, end in ((1, s.q), (-1, s.p)):
            if abs(end) == INF or side * end < policy.M:
                continue
            m.ensure(int(end) - K.N_FF - 4, int(end) + K.N_FF + 4)
            lo, *_, TL, TR = m.arrays()
            t = TR[int(end) - lo] if side == 1 else TL[int(end) - lo]
            if t < math.log(policy.delta):
                return side
        return None

    def fast_forward_log_rates(self, s: IntervalState, side: int, n: int):
        lo, lm, L, R, lb, la, *_ = self.model.arrays()
        if side == 1:
            k = int(s.q) + 1 - lo
            return la[k:k + n]
        k = int(s.p) - 1 - lo
        return lb[k - n + 1:k + 1][::-1]

    @staticmethod
    def explode(s: IntervalState, side: int) -> IntervalState:
        return IntervalState(s.p, INF) if side == 1 else IntervalState(-INF, s.q)


class IntervalKernel:
    """Lambda(Q, .) = mu restricted to Q, renormalized."""

    def __init__(self, rates_or_model, precision: str = "double"):
        self.model = _model(rates_or_model)
        self.mu = self.model.mu
        self.precision = _check_precision(precision)

    def log_mass(self, s: IntervalState) -> float:
        return self.mu.log_mass(s.p, s.q)

    def log_prob(self, s: IntervalState, x: int):
        if not (s.p <= x <= s.q) or self.mu.log_mu(x) == -INF:
            return -INF
        if self.precision == "extended":
            p, q, pinf, qinf = _split(s)
            self.model.ensure(min(x, p if not pinf else x) - 2, max(x, q if not qinf else x) + 2)
            lo, lm = self.model.extended()[:2]
            return lm[x - lo] - self.model.log_mass_ext(p, q, pinf, qinf)
        lq = self.log_mass(s)
        if lq == -INF:
            raise EmptyIntersection(f"{s} carries no mass")
        return float(self.mu.log_mu(x) - lq)

    def prob(self, s, x):
        v = np.exp(self.log_prob(s, x))
        return v if self.precision == "extended" else float(v)

    def support_points(self, s: IntervalState, reach: int):
        lo = max(s.p, -reach) if s.p != -INF else -reach
        hi = min(s.q, reach) if s.q != INF else reach
        lo = int(max(lo, self.mu.rates.lo_f))
        hi = int(min(hi, self.mu.rates.hi_f))
        return range(lo, hi + 1)


# -- trajectories ----------------------------------------------------------

WINDOW_CAP = 13  # driver-level status, never returned by a kernel
TERMINALS = {K.ABSORBED: "Absorbed", K.HORIZON: "HorizonReached",
             K.NO_EXPLOSION: "NoExplosionDetected", WINDOW_CAP: "WindowCapReached"}
EVENT_NAMES = {K.EV_START: "start", K.EV_DUAL: "dual", K.EV_PRIMAL: "primal",
               K.EV_JOINT: "joint", K.EV_EXPLODE_LEFT: "explosion_left",
               K.EV_EXPLODE_RIGHT: "explosion_right"}


@dataclass
class DualTrajectory:
    times: np.ndarray
    states: list                  # IntervalState per event
    kinds: list                   # event names
    primal: np.ndarray | None     # primal state per event (coupled runs)
    explosion_events: list        # (time, side, stratum_before, stratum_after)
    absorption_time: float | None
    terminal: str
    end_time: float
    n_jumps: int
    martingale: float | None = None
    final: IntervalState | None = None
    final_primal: int | None = None

    def strata(self) -> np.ndarray:
        return np.array([s.stratum for s in self.states], dtype=int)

    def to_csv(self) -> str:
        buf = io.StringIO()
        coupled = self.primal is not None
        buf.write("# schema: sstlab.interval_dual/1\n")
        buf.write(f"# terminal: {self.terminal}; absorption_time: {self.absorption_time!r}\n")
        buf.write("time,p,q,stratum,kind" + (",primal\n" if coupled else "\n"))
        for k, (t, s, kind) in enumerate(zip(self.times, self.states, self.kinds)):
            p = "-inf" if s.p == -INF else str(int(s.p))
            q = "+inf" if s.q == INF else str(int(s.q))
            line = f"{float(t)!r},{p},{q},{s.stratum},{kind}"
            if coupled:
                line += f",{int(self.primal[k])}"
            buf.write(line + "\n")
        return buf.getvalue()


def _init_state(s: IntervalState, x: int = 0):
    p, q, pinf, qinf = _split(s)
    ist = np.zeros(12, dtype=np.int64)
    ist[K.I_P], ist[K.I_Q], ist[K.I_PINF], ist[K.I_QINF] = p, q, int(pinf), int(qinf)
    ist[K.I_X] = x
    fst = np.zeros(8)
    fst[K.F_TEXPL] = fst[K.F_TEXPR] = fst[K.F_TABS] = fst[K.F_SIGMA] = np.nan
    return ist, fst


def _fpar(horizon: float, policy: ExplosionPolicy) -> np.ndarray:
    return np.array([float(horizon), math.log(policy.delta)])


def _state_of(ist) -> IntervalState:
    return IntervalState(-INF if ist[K.I_PINF] else int(ist[K.I_P]),
                         INF if ist[K.I_QINF] else int(ist[K.I_Q]))


def _drive(model: IntervalModel, coupled: bool, ipar, fpar, ist, fst, us, vs, log_cap,
           cap: int):
    ev_t = np.empty(max(log_cap, 1))
    ev_i = np.empty((max(log_cap, 1), 5), dtype=np.int64)
    ist[K.I_UPOS] = us.pos
    if vs is not None:
        ist[K.I_VPOS] = vs.pos
    while True:
        arr = model.arrays()
        if coupled:
            status = K.run_coupled(*arr, ipar, fpar, ist, fst, us.buf, vs.buf, ev_t, ev_i)
        else:
            status = K.run_dual(*arr, ipar, fpar, ist, fst, us.buf, ev_t, ev_i)
        if status == K.NEED_U:
            us.pos = int(ist[K.I_UPOS])
            us.refill(us._block)
            ist[K.I_UPOS] = us.pos
            if vs is not None:
                vs.pos = int(ist[K.I_VPOS])
                vs.refill(vs._block)
                ist[K.I_VPOS] = vs.pos
        elif status == K.NEED_EXTEND:
            pts = [int(ist[K.I_X])]
            if not ist[K.I_PINF]:
                pts.append(int(ist[K.I_P]))
            if not ist[K.I_QINF]:
                pts.append(int(ist[K.I_Q]))
            pad = 2 * K.N_FF + 8
            if max(-min(pts), max(pts)) + pad > cap:
                us.pos = int(ist[K.I_UPOS])
                if vs is not None:
                    vs.pos = int(ist[K.I_VPOS])
                n = int(ist[K.I_NEV])
                return WINDOW_CAP, ev_t[:n], ev_i[:n]
            model.ensure(min(pts) - pad, max(pts) + pad)
        elif status == K.NEED_LOG:
            n = ev_t.shape[0]
            ev_t = np.concatenate([ev_t, np.empty(n)])
            ev_i = np.concatenate([ev_i, np.empty((n, 5), dtype=np.int64)])
        else:
            us.pos = int(ist[K.I_UPOS])
            if vs is not None:
                vs.pos = int(ist[K.I_VPOS])
            return status, ev_t[:ist[K.I_NEV]], ev_i[:ist[K.I_NEV]]


def _trajectory(status, ist, fst, ev_t, ev_i, start: IntervalState, x0, coupled, K_mart):
    times = [0.0] + [float(t) for t in ev_t]
    states = [start]
    kinds = ["start"]
    primal = [x0]
    explosions = []
    for row in ev_i:
        p, q, flags, kind, x = (int(v) for v in row)
        s = IntervalState(-INF if flags & 1 else p, INF if flags & 2 else q)
        if kind in (K.EV_EXPLODE_LEFT, K.EV_EXPLODE_RIGHT):
            side = "left" if kind == K.EV_EXPLODE_LEFT else "right"
            explosions.append((times[len(states)], side, states[-1].stratum, s.stratum))
        states.append(s)
        kinds.append(EVENT_NAMES[kind])
        primal.append(x)
    tabs = fst[K.F_TABS]
    return DualTrajectory(
        times=np.asarray(times), states=states, kinds=kinds,
        primal=np.asarray(primal) if coupled else None, explosion_events=explosions,
        absorption_time=None if math.isnan(tabs) else float(tabs),
        terminal=TERMINALS[status], end_time=float(fst[K.F_T]), n_jumps=int(ist[K.I_JTOT]),
        martingale=_mart(start, ist, fst, K_mart) if K_mart else None,
        final=_state_of(ist), final_primal=int(ist[K.I_X]) if coupled else None)


def _mart(start: IntervalState, ist, fst, K_mart) -> float:
    p, q, pinf, qinf = _split(start)
    f0 = K._f_interval(p, q, pinf, qinf, K_mart)
    f1 = K._f_interval(int(ist[K.I_P]), int(ist[K.I_Q]), bool(ist[K.I_PINF]),
                       bool(ist[K.I_QINF]), K_mart)
    return float(f1 - f0 - fst[K.F_INT])


def simulate_dual(rates_or_model, init, horizon: float, policy: ExplosionPolicy = ExplosionPolicy(),
                  seed: SeedSpec = SeedSpec(0), *, log_events: bool = True,
                  martingale_K: int = 0) -> DualTrajectory:
    """Stratified simulation of the interval dual from ``init``.

    Terminal is ``Absorbed`` (state = Z), ``HorizonReached``,
    ``NoExplosionDetected`` (jump budget of an excursion exhausted) or
    ``WindowCapReached``.
    """
    model = _model(rates_or_model)
    s0 = IntervalState.make(*init)
    ist, fst = _init_state(s0)
    ipar = model.ipar(policy, martingale_K, 64 if log_events else 0)
    us = UniformStream(seed, DUAL)
    status, ev_t, ev_i = _drive(model, False, ipar, _fpar(horizon, policy), ist, fst, us,
                                None, 64 if log_events else 0, policy.window_cap)
    return _trajectory(status, ist, fst, ev_t, ev_i, s0, 0, False, martingale_K)


def simulate_coupled(rates_or_model, x0: int, init, horizon: float,
                     policy: ExplosionPolicy = ExplosionPolicy(), seed: SeedSpec = SeedSpec(0),
                     *, stop_at_absorption: bool = True, log_events: bool = True) -> DualTrajectory:
    """Coupled (X, X*) with X a birth-death chain from ``x0`` and X* the
    interval dual from ``init`` (which must contain ``x0``)."""
    model = _model(rates_or_model)
    s0 = IntervalState.make(*init)
    if x0 not in s0:
        raise InconsistentInput(f"Lambda({s0}, {x0}) = 0")
    ist, fst = _init_state(s0, x0)
    ipar = model.ipar(policy, 0, 64 if log_events else 0, stop_at_absorption)
    us = UniformStream(seed, DUAL)
    vs = UniformStream(seed, PRIMAL)
    status, ev_t, ev_i = _drive(model, True, ipar, _fpar(horizon, policy), ist, fst, us, vs,
                                64 if log_events else 0, policy.window_cap)
    return _trajectory(status, ist, fst, ev_t, ev_i, s0, x0, True, 0)


# -- batches ---------------------------------------------------------------

@dataclass
class TrialBatch:
    """Per-trial summaries of a batch of dual (or coupled) runs."""
    terminal: np.ndarray          # status codes
    absorption_time: np.ndarray   # nan when not absorbed
    n_explosions: np.ndarray
    n_jumps: np.ndarray
    final_p: np.ndarray
    final_q: np.ndarray
    final_flags: np.ndarray       # bit 0: p = -inf, bit 1: q = +inf
    final_x: np.ndarray
    x0: np.ndarray
    martingale: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def absorbed(self) -> np.ndarray:
        return ~np.isnan(self.absorption_time)

    @property
    def censored(self) -> np.ndarray:
        """Trials stopped by a budget or the window cap before absorption or the horizon."""
        return (self.terminal == K.NO_EXPLOSION) | (self.terminal == WINDOW_CAP)

    def final_states(self) -> list:
        return [IntervalState(-INF if f & 1 else int(p), INF if f & 2 else int(q))
                for p, q, f in zip(self.final_p, self.final_q, self.final_flags)]


def sample_restricted(mu: LineMeasure, s: IntervalState, u: float) -> int:
    """Inverse-CDF draw from mu restricted to ``s`` (u uniform in [0, 1))."""
    lq = mu.log_mass(s.p, s.q)
    base = mu.log_left(s.p - 1) if s.p != -INF else -INF
    target = np.logaddexp(base, math.log(u) + lq) if u > 0 else base
    while True:
        lo, hi, lm, L, R = mu.arrays()[:5]
        k = int(np.searchsorted(L, target, side="left"))
        if k == 0 and target < L[0]:
            mu.ensure(lo - (hi - lo), hi)
            continue
        if k >= L.shape[0]:
            mu.ensure(lo, hi + (hi - lo))
            continue
        x = lo + k
        return int(min(max(x, s.p), s.q))


def run_trials(rates_or_model, trials: int, horizon: float, policy: ExplosionPolicy,
               seed: int, *, init=None, coupled: bool = False, mu0=None,
               stop_at_absorption: bool = True, martingale_K: int = 0,
               threads: int = 1, first_trial: int = 0) -> TrialBatch:
    """Run independent trials; trial k uses stream ``first_trial + k``.

    ``init`` is a fixed dual state or ``"singleton"`` (X*_0 = {X_0}).
    ``mu0`` (coupled runs) is ``("point", x)`` or ``("restricted", state)``;
    the restricted case draws X_0 from mu restricted to that state using
    the trial's INIT stream.
    """
    model = _model(rates_or_model)
    if policy.M < 10**6:
        model.ensure(-policy.M - 64, policy.M + 64)
    out = {k: np.empty(trials, dtype=np.int64) for k in
           ("terminal", "n_explosions", "n_jumps", "final_p", "final_q", "final_flags",
            "final_x", "x0")}
    tabs = np.full(trials, np.nan)
    mart = np.full(trials, np.nan)
    fpar = _fpar(horizon, policy)

    def one(k: int) -> None:
        sd = SeedSpec(seed, first_trial + k)
        x0 = 0
        if mu0 is not None:
            if mu0[0] == "point":
                x0 = int(mu0[1])
            else:
                x0 = sample_restricted(model.mu, IntervalState.make(*mu0[1]),
                                       UniformStream(sd, INIT, block=8).next())
        s0 = IntervalState(x0, x0) if (init is None or init == "singleton") \
            else IntervalState.make(*init)
        if coupled and x0 not in s0:
            raise InconsistentInput(f"Lambda({s0}, {x0}) = 0")
        ist, fst = _init_state(s0, x0)
        ipar = model.ipar(policy, martingale_K, 0, stop_at_absorption)
        us = UniformStream(sd, DUAL, block=1024)
        vs = UniformStream(sd, PRIMAL, block=1024) if coupled else None
        status, _, _ = _drive(model, coupled, ipar, fpar, ist, fst, us, vs, 0,
                              policy.window_cap)
        out["terminal"][k] = status
        out["n_explosions"][k] = ist[K.I_NEXP]
        out["n_jumps"][k] = ist[K.I_JTOT]
        out["final_p"][k] = ist[K.I_P]
        out["final_q"][k] = ist[K.I_Q]
        out["final_flags"][k] = ist[K.I_PINF] + 2 * ist[K.I_QINF]
        out["final_x"][k] = ist[K.I_X]
        out["x0"][k] = x0
        tabs[k] = fst[K.F_TABS]
        if martingale_K:
            mart[k] = _mart(s0, ist, fst, martingale_K)

    if threads > 1:
        # the window may only grow between trials; pre-extension above keeps
        # workers from racing on it in the common case (growth is locked anyway)
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(one, range(trials)))
    else:
        for k in range(trials):
            one(k)
    return TrialBatch(out["terminal"], tabs, out["n_explosions"], out["n_jumps"],
                      out["final_p"], out["final_q"], out["final_flags"], out["final_x"],
                      out["x0"], mart, meta={"seed": seed, "trials": trials,
                                             "horizon": horizon, "policy": policy})
