"""Numerical checks of the standing assumptions (positive recurrence,
non-explosion, integrability of the diagonal)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..series import CONVERGES, DIVERGES, SeriesResult, log_series
from .graph import GraphModel, half_line
from .rates import BDRates

HOLDS = "Holds"
FAILS = "Fails"
INCONCLUSIVE = "Inconclusive"

DEFAULT_TERMS = 10**4


@dataclass(frozen=True)
class Verdict:
    status: str
    n_terms: int
    last_log_term: float
    log_partial_sum: float
    ratio: float
    detail: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.status == HOLDS


@dataclass(frozen=True)
class AssumptionReport:
    positive_recurrent: Verdict
    nonexplosive: Verdict
    diag_integrable: Verdict

    @property
    def ok(self) -> bool:
        return all(v.status == HOLDS for v in
                   (self.positive_recurrent, self.nonexplosive, self.diag_integrable))

    @property
    def failed(self) -> list[str]:
        return [k for k in ("positive_recurrent", "nonexplosive", "diag_integrable")
                if getattr(self, k).status == FAILS]

    def to_dict(self) -> dict:
        out = {}
        for k in ("positive_recurrent", "nonexplosive", "diag_integrable"):
            v = getattr(self, k)
            out[k] = {"verdict": v.status, "n_terms": v.n_terms,
                      "last_log_term": v.last_log_term,
                      "log_partial_sum": v.log_partial_sum, "ratio": v.ratio,
                      **({"parts": v.detail} if v.detail else {})}
        return out


class _Walk:
    """Running log mu along a half-line family, evaluated in chunks."""

    def __init__(self, h: BDRates):
        self.h = h
        self.lm_next = 0.0       # log mu(k) at the next unread k
        self.cum = -math.inf     # log sum_{m < k} mu(m)

    def take(self, i: int, m: int):
        k = np.arange(i, i + m)
        lb = self.h.log_birth(k)
        la_next = self.h.log_death(k + 1)
        lm = self.lm_next + np.concatenate([[0.0], np.cumsum(lb - la_next)[:-1]])
        self.lm_next = float(lm[-1] + lb[-1] - la_next[-1])
        cum = np.logaddexp.accumulate(np.concatenate([[self.cum], lm]))[1:]
        self.cum = float(cum[-1])
        la = np.where(k >= 1, self.h.log_death(np.maximum(k, 1)), -np.inf)
        return lm, lb, la, cum


def _series(h: BDRates, term, n_terms: int) -> SeriesResult:
    w = _Walk(h)
    return log_series(lambda i, m: term(*w.take(i, m)), max_terms=n_terms,
                      chunk_size=min(1024, n_terms), min_terms=min(200, n_terms))


def _to_verdict(res: SeriesResult, holds_when: str, side: str) -> Verdict:
    if res.verdict == INCONCLUSIVE.lower() or res.verdict not in (CONVERGES, DIVERGES):
        status = INCONCLUSIVE
    else:
        status = HOLDS if res.verdict == holds_when else FAILS
    return Verdict(status, res.n_terms, res.last_log_term, res.log_value, res.ratio,
                   {"side": side})


def _combine(parts: list[Verdict]) -> Verdict:
    if any(p.status == FAILS for p in parts):
        status = FAILS
    elif any(p.status == INCONCLUSIVE for p in parts):
        status = INCONCLUSIVE
    else:
        status = HOLDS
    worst = max(parts, key=lambda p: (p.status != HOLDS, p.n_terms))
    return Verdict(status, worst.n_terms, worst.last_log_term, worst.log_partial_sum,
                   worst.ratio, {p.detail["side"]: p.status for p in parts})


def _half_line_checks(h: BDRates, side: str, n_terms: int):
    pr = _series(h, lambda lm, lb, la, cum: lm, n_terms)
    ne = _series(h, lambda lm, lb, la, cum: cum - lm - lb, n_terms)
    di = _series(h, lambda lm, lb, la, cum: lm + np.logaddexp(lb, la), n_terms)
    return (_to_verdict(pr, CONVERGES, side), _to_verdict(ne, DIVERGES, side),
            _to_verdict(di, CONVERGES, side))


def _finite_report(rates: BDRates) -> AssumptionReport:
    n = rates.hi - rates.lo + 1
    h = Verdict(HOLDS, n, -math.inf, 0.0, 0.0, {"side": "finite"})
    return AssumptionReport(h, h, h)


def check_assumptions(model, *, n_terms: int = DEFAULT_TERMS,
                      sides=("right", "left")) -> AssumptionReport:
    """Classify the three standing assumptions from partial sums.

    ``model`` is a ``BDRates`` (sides of Z examined separately) or a
    ``GraphModel`` (each branch examined; the finite center never matters).
    """
    if isinstance(model, BDRates):
        if model.finite:
            return _finite_report(model)
        halves = []
        for side in sides:
            if side == "right" and model.hi is not None:
                continue
            if side == "left" and model.lo is not None:
                continue
            halves.append((side, half_line(model, side)))
    elif isinstance(model, GraphModel):
        halves = [(f"branch{i + 1}", b.rates) for i, b in enumerate(model.branches)]
    else:
        raise TypeError(f"cannot check assumptions of {type(model).__name__}")
    checks = [_half_line_checks(h, side, n_terms) for side, h in halves]
    if not checks:
        return _finite_report(model)
    return AssumptionReport(*(_combine([c[k] for c in checks]) for k in range(3)))
