"""The link kernel Lambda, the coupling generator and the coupled
construction of a dual X* driven by an observed primal trajectory.

Everything here is generic: a primal row oracle ``L``, a dual row oracle
``Ls`` and a kernel object. Kernels implement

* ``log_prob(Q, x)``: log Lambda(Q, x) (``-inf`` off the support),
* ``log_mass(Q)``: log mu(Q),
* ``support_points(Q, reach)``: the points of Q within ``reach``.

``IntervalKernel`` and ``GraphKernel`` are the two concrete kernels.

Coupling generator, with Gamma = L* Lambda = Lambda L:

* diagonal: ``-(L_x + L*_{x*} + Gamma(x*,x)/Lambda(x*,x))``
* primal move (y* = x*): ``L_{x,y}``
* dual move (y = x): ``L*_{x*,y*} Lambda(y*,x)/Lambda(x*,x)``
* joint move (Lambda(x*,y) = 0, L_{x,y} L*_{x*,y*} > 0):
  ``L_{x,y} L*_{x*,y*} Lambda(y*,y)/Gamma(x*,y)``
* zero otherwise.
"""

from __future__ import annotations

import io
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

import numpy as np

from .ctmc import HORIZON, Trajectory
from .errors import EmptyIntersection, InconsistentInput, OffSupport
from .rng import DUAL, SeedSpec, UniformStream

DIAGONAL = "Diagonal"
PRIMAL_MOVE = "PrimalMove"
DUAL_MOVE = "DualMove"
JOINT_MOVE = "JointMove"
ZERO = "Zero"

ABSORBED = "Absorbed"
NO_EXPLOSION = "NoExplosionDetected"

N_FF = 16  # explicit exponentials in an explosion fast-forward (matches the kernels)


# -- Lambda ------------------------------------------------------------------

@dataclass(frozen=True)
class LambdaRow:
    """Lambda(Q, .) on the listed points; ``log_tail`` is the (normalized)
    mass of Q beyond them."""

    state: Any
    points: tuple
    log_probs: np.ndarray
    log_tail: float = -math.inf

    def prob(self, x) -> float:
        try:
            return float(np.exp(self.log_probs[self.points.index(x)]))
        except ValueError:
            return 0.0

    def total(self) -> float:
        return float(np.exp(np.logaddexp.reduce(np.append(self.log_probs, self.log_tail))))

    def as_dict(self) -> dict:
        return {x: float(np.exp(v)) for x, v in zip(self.points, self.log_probs)}


def as_kernel(mu_or_kernel):
    """Wrap a LineMeasure / GraphMeasure (or rates, graph) in its kernel."""
    if hasattr(mu_or_kernel, "log_prob"):
        return mu_or_kernel
    from .state_space.graph import GraphMeasure, GraphModel
    if isinstance(mu_or_kernel, (GraphMeasure, GraphModel)):
        from .graph_dual import GraphKernel
        return GraphKernel(mu_or_kernel)
    from .interval_dual import IntervalKernel
    from .state_space.measure import LineMeasure
    if isinstance(mu_or_kernel, LineMeasure):
        return IntervalKernel(mu_or_kernel.rates)
    return IntervalKernel(mu_or_kernel)


def lambda_row(Q, mu, reach: int = 64) -> LambdaRow:
    """mu restricted to Q and renormalized, listed on Q within ``reach``.

    Points at infinity carry no mass; what lies beyond ``reach`` is kept
    as ``log_tail`` so that the row still sums to one.
    """
    kern = as_kernel(mu)
    lq = kern.log_mass(Q)
    if lq == -math.inf:
        raise EmptyIntersection(f"{Q} contains no vertex of the graph")
    pts = tuple(kern.support_points(Q, reach))
    lp = np.array([kern.log_prob(Q, x) for x in pts], dtype=float)
    inside = float(np.logaddexp.reduce(lp)) if len(pts) else -math.inf
    with np.errstate(divide="ignore"):
        tail = math.log(max(-math.expm1(inside), 0.0)) if inside < 0 else -math.inf
    # the complement is only meaningful when it exceeds rounding noise
    if tail < -30:
        tail = -math.inf
    return LambdaRow(Q, pts, lp, tail)


# -- coupling generator ------------------------------------------------------

@dataclass(frozen=True)
class CoupledRate:
    source: tuple
    target: tuple
    rate: float
    case: str
    gamma: float | None = None


class Coupling:
    """Coupling generator for (L, L*, Lambda), with memoized Gamma."""

    def __init__(self, L, Ls, kernel):
        self.L = L
        self.Ls = Ls
        self.kernel = as_kernel(kernel)
        self._gamma: dict = {}
        self._lock = threading.Lock()

    def lam(self, xs, x) -> float:
        return float(np.exp(self.kernel.log_prob(xs, x)))

    def gamma(self, xs, y) -> float:
        """Gamma(x*, y) = sum_{y*} L*_{x*,y*} Lambda(y*, y) (diagonal included)."""
        key = (xs, y)
        g = self._gamma.get(key)
        if g is None:
            row = self.Ls.row(xs)
            tot = sum(r for _, r in row)
            g = sum(r * self.lam(ys, y) for ys, r in row) - tot * self.lam(xs, y)
            with self._lock:
                self._gamma[key] = g
        return g

    def rate(self, xbar, ybar) -> CoupledRate:
        (x, xs), (y, ys) = xbar, ybar
        lx = self.lam(xs, x)
        if lx <= 0:
            raise OffSupport(f"Lambda({xs}, {x}) = 0")
        if xbar == ybar:
            lt = sum(r for _, r in self.L.row(x))
            lst = sum(r for _, r in self.Ls.row(xs))
            g = self.gamma(xs, x)
            return CoupledRate(xbar, ybar, -(lt + lst + g / lx), DIAGONAL, g)
        if self.lam(ys, y) <= 0:
            return CoupledRate(xbar, ybar, 0.0, ZERO)
        lxy = dict(self.L.row(x)).get(y, 0.0) if y != x else 0.0
        if ys == xs:
            return CoupledRate(xbar, ybar, lxy, PRIMAL_MOVE)
        lsxy = dict(self.Ls.row(xs)).get(ys, 0.0)
        if y == x:
            return CoupledRate(xbar, ybar, lsxy * self.lam(ys, x) / lx, DUAL_MOVE)
        if self.lam(xs, y) == 0 and lxy * lsxy > 0:
            g = self.gamma(xs, y)
            return CoupledRate(xbar, ybar, lxy * lsxy * self.lam(ys, y) / g, JOINT_MOVE, g)
        return CoupledRate(xbar, ybar, 0.0, ZERO)

    def row(self, xbar) -> list[CoupledRate]:
        """All targets with a possibly nonzero rate, diagonal last."""
        x, xs = xbar
        out = []
        drow = self.Ls.row(xs)
        for y, _ in self.L.row(x):
            if self.lam(xs, y) > 0:
                out.append(self.rate(xbar, (y, xs)))
            else:
                out.extend(self.rate(xbar, (y, ys)) for ys, _ in drow)
        out.extend(self.rate(xbar, (x, ys)) for ys, _ in drow)
        out.append(self.rate(xbar, xbar))
        return out

    def dual_only(self, x, xs) -> list[tuple[Any, float]]:
        """Positive dual-only moves from (x, x*), in dual row order."""
        lx = self.lam(xs, x)
        out = []
        for ys, r in self.Ls.row(xs):
            v = r * self.lam(ys, x) / lx
            if v > 0:
                out.append((ys, v))
        return out

    def joint_targets(self, xs, y) -> list[tuple[Any, float]]:
        """Dual targets when the primal enters y outside x*, with their
        probabilities L*_{x*,y*} Lambda(y*,y) / Gamma(x*,y)."""
        g = self.gamma(xs, y)
        out = []
        for ys, r in self.Ls.row(xs):
            v = r * self.lam(ys, y)
            if v > 0:
                out.append((ys, v / g))
        return out


def coupled_rate(xbar, ybar, L, Ls, kernel) -> CoupledRate:
    """One entry of the coupling generator (see module docstring)."""
    return Coupling(L, Ls, kernel).rate(xbar, ybar)


# -- algebraic residual ------------------------------------------------------

@dataclass
class ResidualReport:
    interior_max: float
    boundary_max: float
    n_interior: int
    n_boundary: int
    worst: tuple | None = None
    scale: float = 0.0              # max |term| seen, for context

    @property
    def max(self) -> float:
        return self.interior_max


class _RowCache:
    """Memoized row oracle (rows as lists and as dicts)."""

    def __init__(self, oracle):
        self.oracle = oracle
        self._rows: dict = {}

    def row(self, x):
        r = self._rows.get(x)
        if r is None:
            r = self.oracle.row(x)
            self._rows[x] = r
        return r

    def rate(self, x, y):
        key = ("d", x)
        d = self._rows.get(key)
        if d is None:
            d = dict(self.row(x))
            self._rows[key] = d
        return d.get(y, 0.0)


def _gamma_lambda_l(L, kern, Q, p, lam_cache) -> float:
    """(Lambda L)(Q, p) for a chain whose edges are rated in both directions."""
    def lam(x):
        k = (Q, x)
        v = lam_cache.get(k)
        if v is None:
            v = kern.prob(Q, x)
            lam_cache[k] = v
        return v

    row = L.row(p)
    tot = -lam(p) * sum(r for _, r in row)
    for x, _ in row:
        lx = lam(x)
        if lx > 0:
            tot += lx * (L.rate(x, p) if isinstance(L, _RowCache) else dict(L.row(x))[p])
    return tot


def algebraic_residual(L, Ls, kernel, dual_states: Iterable, reach: int,
                       inside: Callable[[Any], bool] | None = None,
                       perturb: Callable | None = None) -> ResidualReport:
    """max |(L* Lambda)(Q,p) - (Lambda L)(Q,p)| over the given dual states.

    For each Q the test points are the points of Q within ``reach`` and
    their primal neighbours. Arithmetic follows the oracles' number type
    (extended-precision oracles give an extended-precision residual). Rows where p, a neighbour of p, or a listed
    support point of Q fails ``inside`` (the primal truncation, when the
    primal is a finite surrogate) are reported separately as boundary rows.
    ``perturb(Q, row)`` may alter the dual row (used to test sensitivity).
    """
    kern = as_kernel(kernel)
    inside = inside or (lambda x: True)
    L = _RowCache(L)
    lam_cache: dict = {}
    imax = bmax = scale = 0.0
    ni = nb = 0
    worst = None

    def lam(Q, x):
        k = (Q, x)
        v = lam_cache.get(k)
        if v is None:
            v = kern.prob(Q, x)
            lam_cache[k] = v
        return v

    for Q in dual_states:
        row = Ls.row(Q)
        if perturb is not None:
            row = perturb(Q, row)
        tot = sum(r for _, r in row)
        sup = list(kern.support_points(Q, reach))
        pts = dict.fromkeys(sup)
        for x in sup:
            for y, _ in L.row(x):
                pts.setdefault(y)
        q_inside = all(inside(x) for x in sup)
        for p in pts:
            lhs = sum(r * lam(Qp, p) for Qp, r in row) - tot * lam(Q, p)
            rhs = _gamma_lambda_l(L, kern, Q, p, lam_cache)
            res = abs(lhs - rhs)
            scale = max(scale, abs(lhs), abs(rhs))
            boundary = not (q_inside and inside(p) and all(inside(y) for y, _ in L.row(p)))
            if boundary:
                nb += 1
                bmax = max(bmax, res)
            else:
                ni += 1
                if res > imax:
                    imax, worst = res, (Q, p)
    return ResidualReport(float(imax), float(bmax), ni, nb, worst, float(scale))


# -- initial law -------------------------------------------------------------

def initial_dual_law(x0, mu0_star: list, kernel) -> list[tuple[Any, float]]:
    """P(X*_0 = x* | X_0 = x0) = mu0*(x*) Lambda(x*, x0) / mu0(x0), with
    mu0 = mu0* Lambda; ``mu0_star`` lists (x*, weight)."""
    kern = as_kernel(kernel)
    w = [(xs, m * float(np.exp(kern.log_prob(xs, x0)))) for xs, m in mu0_star]
    tot = sum(v for _, v in w)
    if not tot > 0:
        raise InconsistentInput(f"mu0*Lambda puts no mass on {x0}")
    return [(xs, v / tot) for xs, v in w if v > 0]


def coupling_law(mu0_star: list, kernel, reach: int = 64) -> dict:
    """Joint law mu0*(x*) Lambda(x*, x) of (X_0, X*_0), on points within reach."""
    kern = as_kernel(kernel)
    out = {}
    for xs, m in mu0_star:
        for x in kern.support_points(xs, reach):
            out[(x, xs)] = out.get((x, xs), 0.0) + m * float(np.exp(kern.log_prob(xs, x)))
    return out


def singleton_lift(mu0: dict) -> list:
    """mu0*({x}) = mu0(x); then mu0* Lambda = mu0 exactly."""
    from .interval_dual import IntervalState
    return [(IntervalState(x, x), w) for x, w in mu0.items() if w > 0]


def draw_initial(x0, mu0_star: list, kernel, u: UniformStream):
    law = initial_dual_law(x0, mu0_star, kernel)
    if len(law) == 1:
        return law[0][0]
    return _choose(law, 1.0, u)


def _choose(cands, tot, u: UniformStream):
    target = u.next() * tot
    acc = 0.0
    for y, r in cands:
        acc += r
        if target < acc:
            return y
    return cands[-1][0]


# -- coupled construction ----------------------------------------------------

@dataclass
class CoupledTrajectory:
    times: list
    primal: list
    dual: list
    kinds: list                 # "start", "primal", "joint", "dual", "explosion"
    terminal: str
    end_time: float
    absorption_time: float | None = None
    meta: dict = field(default_factory=dict)

    def dual_at(self, t: float):
        k = int(np.searchsorted(np.asarray(self.times), t, side="right")) - 1
        return self.dual[max(k, 0)]

    def to_csv(self, encode=str) -> str:
        buf = io.StringIO()
        buf.write("# schema: sstlab.coupled/1\n")
        buf.write(f"# terminal: {self.terminal}; absorption_time: {self.absorption_time!r}\n")
        buf.write("time,primal,dual,kind\n")
        for t, x, s, k in zip(self.times, self.primal, self.dual, self.kinds):
            buf.write(f"{float(t)!r},{encode(x)},{_enc(s)},{k}\n")
        return buf.getvalue()


def _enc(s) -> str:
    return s.encode() if hasattr(s, "encode") and not isinstance(s, str) else str(s)


def simulate_dual_given_primal(x_traj: Trajectory, init_dual, L, Ls, kernel, seed: SeedSpec,
                               *, policy=None, max_jumps: int | None = None,
                               stop_at_absorption: bool = False) -> CoupledTrajectory:
    """Build X* along an observed trajectory of X.

    With ``x`` the current primal state and ``x*`` the dual, an
    exponential clock with the total dual-only rate is drawn at each step
    (no draw when that rate is 0). If the primal jumps first, to y, the
    dual stays when Lambda(x*, y) > 0 and otherwise moves to y* with
    probability L*_{x*,y*} Lambda(y*,y) / Gamma(x*,y). If the clock rings
    first the dual moves alone, to y* with probability proportional to its
    dual-only rate.

    Uniforms come from the trial's DUAL stream: one per clock, one per
    choice among two or more candidates, and ``N_FF`` per explosion; this
    is the consumption pattern of the compiled interval kernel.

    If ``policy`` is given and the dual oracle supports explosions
    (``explosion_due``, ``fast_forward_log_rates``, ``explode``), an
    exploding excursion is finished by a fast-forward of N_FF explicit
    passages; primal jumps falling inside it are still applied. The run
    stops at the end of ``x_traj``, or when an excursion exceeds the jump
    budget (``policy.jump_budget`` or ``max_jumps``).
    """
    cp = Coupling(L, Ls, kernel)
    x0 = x_traj.states[0]
    xs = init_dual
    if cp.lam(xs, x0) <= 0:
        raise InconsistentInput(f"Lambda({xs}, {x0}) = 0")
    budget = max_jumps if max_jumps is not None else (
        policy.jump_budget if policy is not None else 10**7)
    can_explode = policy is not None and hasattr(Ls, "explosion_due")
    full = getattr(Ls, "full_state", lambda: None)()
    u = UniformStream(seed, DUAL)
    times, primal, dual, kinds = [0.0], [x0], [xs], ["start"]
    t = 0.0
    j = 0                       # index of the current primal state in x_traj
    end = float(x_traj.end_time)
    pt = x_traj.times
    n_primal = len(pt)
    x = x0
    jexc = 0
    tabs = 0.0 if xs == full else None

    def next_sigma():
        return pt[j + 1] if j + 1 < n_primal else math.inf

    def primal_jump():
        nonlocal j, x, xs, t, jexc
        j += 1
        t = pt[j]
        y = x_traj.states[j]
        if cp.lam(xs, y) > 0:
            kind = "primal"
        else:
            cands = cp.joint_targets(xs, y)
            xs = cands[0][0] if len(cands) == 1 else _choose(cands, 1.0, u)
            kind = "joint"
            jexc += 1
        x = y
        times.append(t)
        primal.append(x)
        dual.append(xs)
        kinds.append(kind)

    while True:
        if xs == full:
            if tabs is None:
                tabs = t
            if stop_at_absorption:
                return CoupledTrajectory(times, primal, dual, kinds, ABSORBED, t, tabs)
        side = Ls.explosion_due(xs, policy) if can_explode else None
        if side is not None:
            rem = 0.0
            for lr in Ls.fast_forward_log_rates(xs, side, N_FF):
                rem += -math.log1p(-u.next()) * math.exp(-lr)
            t_exp = t + rem
            while next_sigma() <= t_exp and next_sigma() <= end:
                primal_jump()
            if t_exp > end:
                return CoupledTrajectory(times, primal, dual, kinds, HORIZON, end, tabs)
            t = t_exp
            xs = Ls.explode(xs, side)
            times.append(t)
            primal.append(x)
            dual.append(xs)
            kinds.append("explosion")
            jexc = 0
            continue
        if jexc >= budget:
            return CoupledTrajectory(times, primal, dual, kinds, NO_EXPLOSION, t, tabs)
        moves = cp.dual_only(x, xs)
        tot = sum(r for _, r in moves)
        eps = -math.log1p(-u.next()) / tot if tot > 0 else math.inf
        sigma = next_sigma()
        if t + eps > sigma:
            if sigma > end:
                return CoupledTrajectory(times, primal, dual, kinds, HORIZON, end, tabs)
            primal_jump()
        else:
            if t + eps > end:
                return CoupledTrajectory(times, primal, dual, kinds, HORIZON, end, tabs)
            t = t + eps
            xs = moves[0][0] if len(moves) == 1 else _choose(moves, tot, u)
            jexc += 1
            times.append(t)
            primal.append(x)
            dual.append(xs)
            kinds.append("dual")
