"""Log-space measures: finite-state ``Measure`` and the lazily extended
stationary measure ``LineMeasure`` of a birth-death chain on Z."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from ..errors import NonSummableTail, WindowExceeded
from ..series import CONVERGES, log1mexp, log_series, logsumexp
from .rates import BDRates

_DIRECT_SUM = 48  # intervals up to this length are summed term by term


@dataclass(frozen=True)
class Measure:
    """Weights over an explicit list of states, plus excluded tail mass.

    ``log_tail`` is the log mass lying outside ``states`` (e.g. beyond a
    truncation window); ``log_total`` covers both.
    """

    states: tuple
    log_weights: np.ndarray
    log_tail: float = -math.inf
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        lw = np.asarray(self.log_weights, dtype=float)
        if lw.shape != (len(self.states),):
            raise ValueError("one log weight per state required")
        if np.any(np.isnan(lw)) or np.any(lw == np.inf):
            raise ValueError("log weights must be < +inf")
        lw.setflags(write=False)
        object.__setattr__(self, "log_weights", lw)
        object.__setattr__(self, "states", tuple(self.states))

    @property
    def log_total(self) -> float:
        return float(np.logaddexp(logsumexp(self.log_weights), self.log_tail))

    @property
    def index(self) -> dict:
        idx = self.meta.get("_index")
        if idx is None:
            idx = {s: k for k, s in enumerate(self.states)}
            self.meta["_index"] = idx
        return idx

    def normalized(self) -> "Measure":
        lt = self.log_total
        return Measure(self.states, self.log_weights - lt, self.log_tail - lt)

    def probs(self) -> np.ndarray:
        """Normalized probabilities of the listed states (tail included in the total)."""
        return np.exp(self.log_weights - self.log_total)

    def weight(self, state) -> float:
        k = self.index.get(state)
        return 0.0 if k is None else float(np.exp(self.log_weights[k]))

    @classmethod
    def from_weights(cls, states: Sequence, weights, log_tail: float = -math.inf) -> "Measure":
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        with np.errstate(divide="ignore"):
            return cls(tuple(states), np.log(w), log_tail)

    @classmethod
    def point(cls, state, states: Sequence | None = None) -> "Measure":
        states = tuple(states) if states is not None else (state,)
        lw = np.where([s == state for s in states], 0.0, -np.inf)
        return cls(states, lw)


class LineMeasure:
    """Stationary measure of a birth-death chain, with adaptive tails.

    Unnormalized: ``log_mu(ref) == 0`` where ``ref`` is 0 clamped to the
    support. Arrays cover the window ``[lo, hi]`` and grow on demand:

    * ``lm[k]``  log mu(lo+k)
    * ``L[k]``   log mu((-inf, lo+k])
    * ``R[k]``   log mu([lo+k, +inf))

    Tail masses beyond the window come from ``log_series`` and raise
    ``NonSummableTail`` unless the convergence rule fires.
    """

    def __init__(self, rates: BDRates, window: tuple[int, int] = (-64, 64), *,
                 max_terms: int = 10**6):
        self.rates = rates
        self.max_terms = max_terms
        self.ref = int(min(max(0, rates.lo_f), rates.hi_f))
        self._lock = threading.Lock()
        self.lo = self.hi = self.ref
        self._build(*self._clip(*window))

    # -- construction --------------------------------------------------
    def _clip(self, lo: int, hi: int) -> tuple[int, int]:
        lo = int(max(min(lo, self.ref), self.rates.lo_f))
        hi = int(min(max(hi, self.ref), self.rates.hi_f))
        return lo, hi

    def _log_products(self, lo: int, hi: int) -> np.ndarray:
        r = self.rates
        lm = np.zeros(hi - lo + 1)
        k0 = self.ref - lo
        if hi > self.ref:
            n = np.arange(self.ref, hi)
            lm[k0 + 1:] = np.cumsum(r.log_birth(n) - r.log_death(n + 1))
        if lo < self.ref:
            n = np.arange(self.ref, lo, -1)
            lm[:k0][::-1] = np.cumsum(r.log_death(n) - r.log_birth(n - 1))
        return lm

    def _tail(self, start: int, lm_start: float, direction: int) -> float:
        """log of sum_{k>=1} mu(start + direction*k) given log mu(start)."""
        r = self.rates
        edge = r.hi if direction > 0 else r.lo
        if edge is not None:
            if start == edge:
                return -math.inf
            n = np.arange(start, edge, direction) if direction > 0 else np.arange(start, edge, -1)
            if direction > 0:
                steps = r.log_birth(n) - r.log_death(n + 1)
            else:
                steps = r.log_death(n) - r.log_birth(n - 1)
            return logsumexp(lm_start + np.cumsum(steps))
        state = {"last": lm_start}

        def chunk(i, m):
            n = start + direction * np.arange(i, i + m)  # n_k, term is mu(n_k + dir)
            if direction > 0:
                steps = r.log_birth(n) - r.log_death(n + 1)
            else:
                steps = r.log_death(n) - r.log_birth(n - 1)
            out = state["last"] + np.cumsum(steps)
            state["last"] = out[-1]
            return out

        res = log_series(chunk, max_terms=self.max_terms)
        if res.verdict != CONVERGES:
            side = "right" if direction > 0 else "left"
            raise NonSummableTail(
                f"{side} tail of mu is not summable ({res.verdict} after "
                f"{res.n_terms} terms, trailing ratio {res.ratio:.6g})")
        return res.log_value

    def _build(self, lo: int, hi: int) -> None:
        lm = self._log_products(lo, hi)
        lt = self._tail(lo, lm[0], -1)
        rt = self._tail(hi, lm[-1], +1)
        L = np.logaddexp.accumulate(np.concatenate([[lt], lm]))[1:]
        R = np.logaddexp.accumulate(np.concatenate([[rt], lm[::-1]]))[1:][::-1]
        n = np.arange(lo, hi + 1)
        lb = self.rates.log_birth(n)
        la = self.rates.log_death(n)
        for a in (lm, L, R, lb, la):
            a.setflags(write=False)
        # publish atomically (readers hold references to whole tuples)
        self._arrays = (lo, hi, lm, L, R, lb, la, lt, rt)
        self.lo, self.hi = lo, hi
        self.log_left_tail, self.log_right_tail = lt, rt
        self.lm, self.L, self.R, self.lb, self.la = lm, L, R, lb, la
        self.log_total = float(np.logaddexp(L[-1], rt))

    def ensure(self, lo: int, hi: int) -> None:
        """Grow the window (by doubling) so that it covers [lo, hi] ∩ support."""
        lo, hi = self._clip(lo, hi)
        if lo >= self.lo and hi <= self.hi:
            return
        with self._lock:
            if lo >= self.lo and hi <= self.hi:
                return
            width = max(self.hi - self.lo, 64)
            nlo = min(lo, self.lo - width) if lo < self.lo else self.lo
            nhi = max(hi, self.hi + width) if hi > self.hi else self.hi
            self._build(*self._clip(nlo, nhi))

    # -- queries -------------------------------------------------------
    @property
    def support(self) -> tuple[float, float]:
        return self.rates.lo_f, self.rates.hi_f

    def _k(self, n: int) -> int:
        if not (self.rates.lo_f <= n <= self.rates.hi_f):
            raise WindowExceeded(f"state {n} outside support {self.support}")
        self.ensure(n - 1, n + 1)
        return n - self.lo

    def _at(self, n: int, which: int) -> float:
        # one snapshot for both the offset and the array: safe if another
        # thread grows the window meanwhile (windows only grow)
        self._k(n)
        snap = self._arrays
        return float(snap[which][n - snap[0]])

    def log_mu(self, n):
        if np.ndim(n):
            n = np.asarray(n)
            self.ensure(int(n.min()), int(n.max()))
            inside = (n >= self.rates.lo_f) & (n <= self.rates.hi_f)
            out = np.full(n.shape, -np.inf)
            out[inside] = self.lm[n[inside] - self.lo]
            return out
        if not (self.rates.lo_f <= n <= self.rates.hi_f):
            return -math.inf
        return self._at(int(n), 2)

    def log_left(self, q) -> float:
        """log mu((-inf, q])."""
        if q == math.inf:
            return self.log_total
        if q < self.rates.lo_f:
            return -math.inf
        q = int(min(q, self.rates.hi_f))
        return self._at(q, 3)

    def log_right(self, p) -> float:
        """log mu([p, +inf))."""
        if p == -math.inf:
            return self.log_total
        if p > self.rates.hi_f:
            return -math.inf
        p = int(max(p, self.rates.lo_f))
        return self._at(p, 4)

    def log_mass(self, p, q) -> float:
        """log mu([p, q]); ``p = -inf`` / ``q = +inf`` allowed."""
        if p > q:
            return -math.inf
        if p == -math.inf:
            return self.log_left(q)
        if q == math.inf:
            return self.log_right(p)
        p = int(max(p, self.rates.lo_f))
        q = int(min(q, self.rates.hi_f))
        if p > q:
            return -math.inf
        self.ensure(p - 1, q + 1)
        return interval_log_mass(self.lm, self.L, self.R, self.lo,
                                 self.log_left_tail, self.log_right_tail, p, q)

    def normalized_window(self, lo: int, hi: int) -> Measure:
        """Normalized measure on [lo, hi] ∩ support with the remaining mass as tail."""
        lo, hi = self._clip(lo, hi)
        self.ensure(lo, hi)
        lw = self.lm[lo - self.lo:hi - self.lo + 1] - self.log_total
        inside = logsumexp(lw)
        tail = float(log1mexp(min(inside, 0.0))) if inside < 0 else -math.inf
        return Measure(tuple(range(lo, hi + 1)), lw, tail,
                       meta={"window": (lo, hi)})

    def tail_mass_outside(self, lo: int, hi: int) -> float:
        """Normalized mass outside [lo, hi]."""
        a = self.log_left(lo - 1) - self.log_total if lo - 1 >= self.rates.lo_f else -math.inf
        b = self.log_right(hi + 1) - self.log_total if hi + 1 <= self.rates.hi_f else -math.inf
        return float(np.exp(np.logaddexp(a, b)))

    def arrays(self) -> tuple[Any, ...]:
        """Consistent snapshot ``(lo, hi, lm, L, R, lb, la, left_tail, right_tail)``."""
        return self._arrays


def interval_log_mass(lm, L, R, lo, lt, rt, p: int, q: int) -> float:
    """log mu([p, q]) for finite p <= q inside the arrays' window.

    Short intervals are summed directly. Longer ones take a difference of
    cumulative masses on whichever side cancels less.
    """
    kp, kq = p - lo, q - lo
    if kq - kp < _DIRECT_SUM:
        seg = lm[kp:kq + 1]
        m = seg.max()
        return float(m + math.log(np.exp(seg - m).sum()))
    left_below = L[kp - 1] if kp >= 1 else lt
    right_above = R[kq + 1] if kq + 1 < R.shape[0] else rt
    dl = left_below - L[kq]
    dr = right_above - R[kp]
    if dl <= dr:
        return float(L[kq] + log1mexp(min(dl, 0.0)))
    return float(R[kp] + log1mexp(min(dr, 0.0)))


def mu_bd(rates: BDRates, window: tuple[int, int] = (-64, 64)) -> LineMeasure:
    """Stationary measure of a birth-death chain covering at least ``window``.

    Raises ``NonSummableTail`` when positive recurrence fails numerically
    and ``WindowExceeded`` if a Table family is asked beyond its window.
    """
    lo, hi = window
    if lo > hi:
        raise ValueError("empty window")
    if rates.finite and (lo < rates.lo or hi > rates.hi):
        raise WindowExceeded(
            f"window [{lo}, {hi}] exceeds table support [{rates.lo}, {rates.hi}]")
    return LineMeasure(rates, (lo, hi))
