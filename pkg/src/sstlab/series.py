"""Adaptive summation of positive series given in log space.

Verdicts are numerical heuristics. ``converges`` means the stopping rule
(``run`` consecutive relative increments below ``rel_tol``) fired;
``diverges`` means the terms were observed to be non-decreasing over a
trailing window, so they cannot tend to zero; otherwise the trailing term
ratio decides, with ``inconclusive`` for ratios in [0.999, 1.001].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

CONVERGES = "converges"
DIVERGES = "diverges"
INCONCLUSIVE = "inconclusive"

RATIO_BAND = (0.999, 1.001)
_TREND_WINDOW = 100


@dataclass(frozen=True)
class SeriesResult:
    log_value: float
    n_terms: int
    last_log_term: float
    ratio: float
    verdict: str
    stopped: bool

    @property
    def value(self) -> float:
        return float(np.exp(self.log_value))

    @property
    def log_tail_estimate(self) -> float:
        """Geometric tail bound from the trailing ratio (inf if ratio >= 1)."""
        if not self.ratio < 1.0:
            return np.inf
        return self.last_log_term + np.log(self.ratio) - np.log1p(-self.ratio)


def log1mexp(d):
    """log(1 - exp(d)) for d <= 0, accurate on both ends."""
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.where(d > -0.6931471805599453,
                       np.log(-np.expm1(np.minimum(d, 0.0))),
                       np.log1p(-np.exp(np.minimum(d, 0.0))))
    return out if out.ndim else float(out)


def log_series(chunk: Callable[[int, int], np.ndarray], *, start: int = 0,
               rel_tol: float = 1e-15, run: int = 10,
               max_terms: int = 10**6, chunk_size: int = 1024,
               min_terms: int = 2 * _TREND_WINDOW) -> SeriesResult:
    """Sum ``exp(chunk(i, m))`` for i = start, start+1, ... adaptively.

    ``chunk(i, m)`` returns the log of terms i .. i+m-1; it is called with
    consecutive ranges, so callers may keep running state between calls.
    """
    log_s = -np.inf
    small_run = 0
    n = 0
    tail = np.empty(0)
    last = -np.inf
    while n < max_terms:
        m = min(chunk_size, max_terms - n)
        lt = np.asarray(chunk(start + n, m), dtype=float)
        if np.any(np.isnan(lt)) or np.any(lt == np.inf):
            raise FloatingPointError("series term evaluated to nan/inf")
        with np.errstate(invalid="ignore"):
            cum = np.logaddexp.accumulate(np.concatenate([[log_s], lt]))[1:]
            rel = np.exp(lt - cum)
        rel[lt == -np.inf] = 0.0
        small = rel < rel_tol
        # carry the run of small increments across chunk boundaries
        runs = np.empty(m, dtype=np.int64)
        r = small_run
        for k in range(m):
            r = r + 1 if small[k] else 0
            runs[k] = r
            if r >= run:
                n += k + 1
                log_s = cum[k]
                last = lt[k]
                tail = np.concatenate([tail, lt[:k + 1]])[-_TREND_WINDOW - 1:]
                return SeriesResult(float(log_s), n, float(last),
                                    _ratio(tail), CONVERGES, True)
        small_run = r
        n += m
        log_s = cum[-1]
        last = lt[-1]
        tail = np.concatenate([tail, lt])[-_TREND_WINDOW - 1:]
        if n >= min_terms and tail.shape[0] > _TREND_WINDOW:
            if last > -np.inf and np.all(np.diff(tail) >= -1e-12):
                return SeriesResult(float(log_s), n, float(last),
                                    _ratio(tail), DIVERGES, True)
    ratio = _ratio(tail)
    if ratio > RATIO_BAND[1]:
        verdict = DIVERGES
    elif ratio < RATIO_BAND[0]:
        verdict = CONVERGES
    else:
        verdict = INCONCLUSIVE
    return SeriesResult(float(log_s), n, float(last), ratio, verdict, False)


def _ratio(tail: np.ndarray) -> float:
    tail = tail[np.isfinite(tail)]
    if tail.shape[0] < 2:
        return 0.0
    return float(np.exp((tail[-1] - tail[0]) / (tail.shape[0] - 1)))


def logsumexp(a) -> float:
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return -np.inf
    m = np.max(a)
    if m == -np.inf:
        return -np.inf
    if m == np.inf:
        return np.inf
    return float(m + np.log(np.sum(np.exp(a - m))))
