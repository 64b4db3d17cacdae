"""Minimal-process simulation from a row oracle, and exact transient laws
on finite truncations."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Hashable, Protocol

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.stats import poisson

from .errors import BadRowSums, NonSquare
from .rng import PRIMAL, SeedSpec, UniformStream
from .state_space.measure import Measure
from .state_space.rates import BDRates

HORIZON = "HorizonReached"
ABSORBED = "Absorbed"
BUDGET = "JumpBudgetExhausted"
EXPLODED = "Exploded"

ROW_SUM_TOL = 1e-10
POISSON_TAIL = 1e-14
UNIFORMIZATION_BUDGET = 20_000  # max lambda*t before switching to the stiff solver


class RateOracle(Protocol):
    def row(self, x) -> list[tuple[Hashable, float]]: ...

    def total_rate(self, x) -> float: ...


class BDOracle:
    """Row oracle of a birth-death chain; rows are ordered (down, up).

    ``precision="extended"`` returns np.longdouble rates (exponentials of
    the same double log rates), for exact-identity checks.
    """

    def __init__(self, rates: BDRates, precision: str = "double"):
        self.rates = rates
        self._conv = float if precision == "double" else np.longdouble

    def row(self, x: int):
        out = []
        a = self._conv(np.exp(np.longdouble(self.rates.log_death(x))))
        b = self._conv(np.exp(np.longdouble(self.rates.log_birth(x))))
        if a > 0:
            out.append((x - 1, a))
        if b > 0:
            out.append((x + 1, b))
        return out

    def total_rate(self, x: int) -> float:
        return sum(r for _, r in self.row(x))


@dataclass(frozen=True)
class FiniteGenerator:
    """Q-matrix on an explicit list of states."""

    matrix: np.ndarray
    states: tuple

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)

    @property
    def index(self) -> dict:
        return {s: k for k, s in enumerate(self.states)}


class MatrixOracle:
    def __init__(self, gen: FiniteGenerator):
        self.gen = gen
        self._index = gen.index

    def row(self, x):
        k = self._index[x]
        q = self.gen.matrix[k]
        return [(self.gen.states[j], float(q[j])) for j in np.flatnonzero(q > 0) if j != k]

    def total_rate(self, x) -> float:
        return float(-self.gen.matrix[self._index[x], self._index[x]])


@dataclass
class Trajectory:
    states: list
    times: list
    terminal: str
    end_time: float
    explosion_time: float | None = None

    def state_at(self, t: float):
        k = int(np.searchsorted(np.asarray(self.times), t, side="right")) - 1
        return self.states[max(k, 0)]

    def to_csv(self, encode=str) -> str:
        buf = io.StringIO()
        buf.write("# schema: sstlab.trajectory/1\n")
        buf.write(f"# terminal: {self.terminal}; end_time: {self.end_time!r}\n")
        buf.write("jump,time,state\n")
        for k, (t, s) in enumerate(zip(self.times, self.states)):
            buf.write(f"{k},{t!r},{encode(s)}\n")
        return buf.getvalue()


def simulate_minimal(oracle: RateOracle, init, horizon: float, max_jumps: int,
                     seed: SeedSpec, *, stream: UniformStream | None = None) -> Trajectory:
    """Event-driven minimal process: Exp(L_x) holding, then y w.p. L_xy / L_x.

    One uniform is drawn per holding time and one per jump choice (the
    choice draw is skipped when the row has a single entry).
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    u = stream if stream is not None else UniformStream(seed, PRIMAL)
    x, t = init, 0.0
    states, times = [x], [0.0]
    for _ in range(max_jumps):
        row = oracle.row(x)
        tot = sum(r for _, r in row)
        if tot <= 0:
            return Trajectory(states, times, ABSORBED, horizon)
        t = t - math.log1p(-u.next()) / tot
        if t > horizon:
            return Trajectory(states, times, HORIZON, horizon)
        x = _choose(row, tot, u)
        states.append(x)
        times.append(t)
    return Trajectory(states, times, BUDGET, t)


def _choose(row, tot, u: UniformStream):
    if len(row) == 1:
        return row[0][0]
    target = u.next() * tot
    acc = 0.0
    for y, r in row:
        acc += r
        if target < acc:
            return y
    return row[-1][0]


# -- finite generators -------------------------------------------------------

def truncate_bd(rates: BDRates, window: tuple[int, int]) -> FiniteGenerator:
    """Reflecting truncation: births out of ``hi`` and deaths out of ``lo`` dropped."""
    lo, hi = int(window[0]), int(window[1])
    if lo > hi:
        raise ValueError("empty window")
    n = hi - lo + 1
    q = np.zeros((n, n))
    if n > 1:
        k = np.arange(lo, hi)
        b = np.exp(rates.log_birth(k))
        a = np.exp(rates.log_death(k + 1))
        idx = np.arange(n - 1)
        q[idx, idx + 1] = b
        q[idx + 1, idx] = a
        q[np.diag_indices(n)] = -q.sum(axis=1)
    return FiniteGenerator(q, tuple(range(lo, hi + 1)))


def validate_generator(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise NonSquare(f"generator must be square, got shape {q.shape}")
    off = q - np.diag(np.diag(q))
    if np.any(off < 0):
        raise BadRowSums("negative off-diagonal rate")
    scale = np.maximum(1.0, np.abs(np.diag(q)))
    bad = np.abs(q.sum(axis=1)) > ROW_SUM_TOL * scale
    if np.any(bad):
        raise BadRowSums(f"row {int(np.flatnonzero(bad)[0])} does not sum to 0")
    return q


def _poisson_weights(lt: float):
    kmax = int(poisson.isf(POISSON_TAIL, lt)) + 1 if lt > 0 else 0
    kmin = int(poisson.ppf(POISSON_TAIL, lt)) if lt > 50 else 0
    k = np.arange(kmin, kmax + 1)
    return kmin, poisson.pmf(k, lt)


def _uniformized(q: np.ndarray, v: np.ndarray, t: float, left: bool) -> np.ndarray:
    lam = float(np.max(-np.diag(q)))
    if lam == 0 or t == 0:
        return v.copy()
    p = sp.csr_matrix(np.eye(q.shape[0]) + q / lam)
    if left:
        p = p.T.tocsr()
    kmin, w = _poisson_weights(lam * t)
    cur = v.copy()
    for _ in range(kmin):
        cur = p @ cur
    out = w[0] * cur
    for wk in w[1:]:
        cur = p @ cur
        out += wk * cur
    return out


def _tridiagonal_stationary(q: np.ndarray) -> np.ndarray | None:
    """Unnormalized reversible stationary vector of a tridiagonal Q, else None."""
    n = q.shape[0]
    band = np.abs(np.triu(q, 2)).sum() + np.abs(np.tril(q, -2)).sum()
    if band > 0 or n < 2:
        return None
    up, down = np.diag(q, 1), np.diag(q, -1)
    if np.any(up <= 0) or np.any(down <= 0):
        return None
    lp = np.concatenate([[0.0], np.cumsum(np.log(up) - np.log(down))])
    return np.exp(lp - lp.max())


def _stiff(q: np.ndarray, mu0: np.ndarray, t: float) -> np.ndarray:
    """Radau integration. For reversible tridiagonal Q it integrates
    h = mu_t / pi, which solves h' = Q h and stays O(1) across scales."""
    pi = _tridiagonal_stationary(q)
    qs = sp.csc_matrix(q)
    if pi is not None:
        h0 = mu0 / pi
        sol = solve_ivp(lambda s, h: qs @ h, (0.0, t), h0, method="Radau",
                        jac=qs, rtol=1e-13, atol=1e-14 * max(1.0, np.abs(h0).max()))
        return sol.y[:, -1] * pi
    qt = qs.T.tocsc()
    sol = solve_ivp(lambda s, m: qt @ m, (0.0, t), mu0, method="Radau",
                    jac=qt, rtol=1e-13, atol=1e-16)
    return sol.y[:, -1]


def transient_distribution(gen, mu0, t: float, *, method: str = "auto"):
    """mu_t = mu0 exp(tL) on a finite generator.

    Uniformization with a Poisson tail cut at 1e-14 is used when
    ``lambda*t`` is moderate; stiff truncations (rates spanning many orders
    of magnitude) go through an implicit Radau solve instead.
    Returns the same kind of object as ``mu0`` (array or Measure).
    """
    q = validate_generator(gen)
    as_measure = isinstance(mu0, Measure)
    v = mu0.probs() if as_measure else np.asarray(mu0, dtype=float)
    if v.shape != (q.shape[0],):
        raise NonSquare("initial law does not match the generator size")
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        out = v.copy()
    else:
        lam_t = float(np.max(-np.diag(q))) * t
        if method == "uniformization" or (method == "auto" and lam_t <= UNIFORMIZATION_BUDGET):
            out = _uniformized(q, v, t, left=True)
        else:
            out = _stiff(q, v, t)
    if as_measure:
        with np.errstate(divide="ignore"):
            return Measure(mu0.states, np.log(np.maximum(out, 0.0)))
    return out


def transition_matrix(gen, t: float, *, method: str = "auto") -> np.ndarray:
    """exp(tL) for a finite generator (rows are the laws started from each state)."""
    q = validate_generator(gen)
    n = q.shape[0]
    if t == 0:
        return np.eye(n)
    lam_t = float(np.max(-np.diag(q))) * t
    if method == "uniformization" or (method == "auto" and lam_t <= UNIFORMIZATION_BUDGET):
        return np.column_stack([_uniformized(q, e, t, left=False) for e in np.eye(n)])
    # backward equation P' = Q P, all columns in one implicit solve so that the
    # row sums inherit Q 1 = 0 step by step
    big = sp.kron(sp.identity(n, format="csc"), sp.csc_matrix(q), format="csc")
    sol = solve_ivp(lambda s, y: big @ y, (0.0, t), np.eye(n).ravel(order="F"),
                    method="Radau", jac=big, rtol=1e-12, atol=1e-15)
    return sol.y[:, -1].reshape((n, n), order="F")
