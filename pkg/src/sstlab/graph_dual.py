"""Strong stationary dual of a reversible chain on a branch graph.

Dual states are connected subsets of the compactified graph (the graph plus
one point ``Delta_i`` at the end of every infinite branch). They are stored
canonically, which makes connectivity a property of the representation:

* ``mask``: bitmask of the center vertices in Q;
* ``ext[i]``: extent of Q along branch i when the attach vertex is in Q:
  ``EMPTY``, a prefix ``phi_i([0, k])`` (stored as ``k >= 0``) or ``FULL``
  (the whole branch with ``Delta_i``);
* ``seg``: for a set lying inside a single branch (``mask == 0``), the
  triple ``(i, a, b)`` for ``phi_i([a, b])``; ``b = None`` stands for
  ``phi_i([a, inf))`` together with ``Delta_i``.

Transitions, with ``mu`` the stationary measure:

* growth ``Q -> Q + {p}`` for p adjacent to Q, at rate
  ``mu(Q + p)/mu(Q) * sum_{q in Q} L[p, q]``;
* removal of p in Q with a neighbour outside Q: every connected component
  Q' of ``Q - {p}`` is a target, at rate ``mu(Q')/mu(Q) * sum_{q not in Q} L[p, q]``.

Removing an attach vertex detaches its branches whole (with ``Delta_i``
when present); nothing else can remove a ``Delta_i``.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _graph_kernels as GK
from .errors import AbsorbedState, EmptyIntersection, InconsistentInput, ValidationError
from .interval_dual import ExplosionPolicy, IntervalModel
from .rng import DUAL, SeedSpec, UniformStream
from .series import logsumexp
from .state_space.graph import BranchVertex, GraphMeasure, GraphModel

EMPTY = -1
FULL = -2


class DualSet(NamedTuple):
    mask: int
    ext: tuple
    seg: tuple | None = None

    @classmethod
    def make(cls, graph: GraphModel, mask: int = 0, ext=None, seg=None) -> "DualSet":
        """Validated constructor; ``ext`` may be a dict {branch: extent}."""
        n = graph.n_branches
        if ext is None:
            ext = (EMPTY,) * n
        elif isinstance(ext, dict):
            e = [EMPTY] * n
            for i, v in ext.items():
                e[i] = v
            ext = tuple(e)
        s = cls(int(mask), tuple(int(v) for v in ext),
                None if seg is None else (int(seg[0]), int(seg[1]),
                                          None if seg[2] is None else int(seg[2])))
        s.check(graph)
        return s

    def check(self, graph: GraphModel) -> None:
        nc = len(graph.center)
        if len(self.ext) != graph.n_branches:
            raise ValidationError("one extent per branch is required")
        if self.mask >> nc:
            raise ValidationError("center mask has bits beyond the center")
        if self.mask == 0:
            if self.seg is None or any(e != EMPTY for e in self.ext):
                raise ValidationError("a set without center vertices is a single branch segment")
            i, a, b = self.seg
            if not (0 <= i < graph.n_branches and a >= 0 and (b is None or b >= a)):
                raise ValidationError(f"bad branch segment {self.seg}")
            return
        if self.seg is not None:
            raise ValidationError("branch segments only occur without center vertices")
        if not _connected(self.mask, graph.adj):
            raise ValidationError("center part is not connected")
        for i, e in enumerate(self.ext):
            if e < FULL:
                raise ValidationError(f"bad extent {e}")
            if e != EMPTY and not (self.mask >> graph.branches[i].attach) & 1:
                raise ValidationError(f"branch {i + 1} extends from a vertex not in the set")

    @property
    def stratum(self) -> int:
        """Number of points Delta_i in the set."""
        if self.seg is not None:
            return int(self.seg[2] is None)
        return sum(1 for e in self.ext if e == FULL)

    def deltas(self) -> tuple:
        """Branches whose Delta_i lies in the set."""
        if self.seg is not None:
            return (self.seg[0],) if self.seg[2] is None else ()
        return tuple(i for i, e in enumerate(self.ext) if e == FULL)

    def __contains__(self, v) -> bool:
        if isinstance(v, BranchVertex):
            if self.seg is not None:
                i, a, b = self.seg
                return v.branch == i and a <= v.k and (b is None or v.k <= b)
            e = self.ext[v.branch]
            return e == FULL or 0 <= v.k <= e
        return bool((self.mask >> int(v)) & 1)

    def encode(self) -> str:
        """Text form, e.g. ``C:1;B1:P3;B2:F;B3:-`` or ``C:0;B1:-;B2:S3-7;B3:-``."""
        parts = [f"C:{self.mask:x}"]
        for i, e in enumerate(self.ext):
            if self.seg is not None and self.seg[0] == i:
                a, b = self.seg[1], self.seg[2]
                tok = f"H{a}" if b is None else f"S{a}-{b}"
            else:
                tok = "-" if e == EMPTY else ("F" if e == FULL else f"P{e}")
            parts.append(f"B{i + 1}:{tok}")
        return ";".join(parts)

    @classmethod
    def decode(cls, text: str, graph: GraphModel | None = None) -> "DualSet":
        items = text.strip().split(";")
        if not items or not items[0].startswith("C:"):
            raise ValueError(f"bad dual set encoding {text!r}")
        mask = int(items[0][2:], 16)
        ext, seg = [], None
        for i, item in enumerate(items[1:]):
            name, _, tok = item.partition(":")
            if name != f"B{i + 1}":
                raise ValueError(f"bad branch field {item!r}")
            if tok == "-":
                ext.append(EMPTY)
            elif tok == "F":
                ext.append(FULL)
            elif tok.startswith("P"):
                ext.append(int(tok[1:]))
            elif tok.startswith("H"):
                ext.append(EMPTY)
                seg = (i, int(tok[1:]), None)
            elif tok.startswith("S"):
                a, b = tok[1:].split("-")
                ext.append(EMPTY)
                seg = (i, int(a), int(b))
            else:
                raise ValueError(f"bad branch extent {tok!r}")
        s = cls(mask, tuple(ext), seg)
        if graph is not None:
            s.check(graph)
        return s

    def __str__(self) -> str:
        return self.encode()


def full_set(graph: GraphModel) -> DualSet:
    return DualSet((1 << len(graph.center)) - 1, (FULL,) * graph.n_branches)


def singleton(graph: GraphModel, v) -> DualSet:
    """{v} for a center index or a BranchVertex."""
    n = graph.n_branches
    if isinstance(v, BranchVertex):
        return DualSet(0, (EMPTY,) * n, (v.branch, v.k, v.k))
    return DualSet(1 << int(v), (EMPTY,) * n)


def _connected(mask: int, adj) -> bool:
    if mask == 0:
        return False
    start = (mask & -mask).bit_length() - 1
    seen = 1 << start
    frontier = seen
    while frontier:
        j = (frontier & -frontier).bit_length() - 1
        frontier &= frontier - 1
        new = adj[j] & mask & ~seen
        seen |= new
        frontier |= new
    return seen == mask


def _components(mask: int, adj) -> list[int]:
    """Connected components of the center subgraph on ``mask``, ordered by
    their smallest vertex."""
    out = []
    rest = mask
    while rest:
        start = (rest & -rest).bit_length() - 1
        seen = frontier = 1 << start
        while frontier:
            j = (frontier & -frontier).bit_length() - 1
            frontier &= frontier - 1
            new = adj[j] & mask & ~seen
            seen |= new
            frontier |= new
        out.append(seen)
        rest &= ~seen
    return out


# -- model -----------------------------------------------------------------

class GraphDualModel:
    """Graph plus its stationary measure, one IntervalModel per branch
    (window arrays and explosion tail times along the branch)."""

    def __init__(self, graph: GraphModel, window: int = 64):
        self.graph = graph
        self.branch_models = [IntervalModel(b.rates, (0, window)) for b in graph.branches]
        offs = np.array([graph.log_mu_center[b.attach] + math.log(b.out0) - math.log(b.in0)
                         for b in graph.branches], dtype=float)
        bms = [m.mu for m in self.branch_models]
        parts = list(graph.log_mu_center) + [offs[i] + bms[i].log_total for i in range(len(bms))]
        self.measure = GraphMeasure(graph, graph.log_mu_center.copy(), bms, offs,
                                    float(np.logaddexp.reduce(np.asarray(parts, float))))
        self._lout0 = np.array([math.log(b.out0) for b in graph.branches])
        self._lin0 = np.array([math.log(b.in0) for b in graph.branches])
        self._packed = None

    @property
    def n_branches(self) -> int:
        return self.graph.n_branches

    def full_state(self) -> DualSet:
        return full_set(self.graph)

    def ensure_depth(self, depth: int) -> None:
        for m in self.branch_models:
            m.ensure(0, int(depth))

    # branch quantities (log space)
    def log_birth(self, i: int, k: int) -> float:
        """log L[phi_i(k), phi_i(k+1)]."""
        m = self.branch_models[i]
        m.ensure(0, k + 2)
        return float(m.arrays()[4][k])

    def log_death(self, i: int, k: int) -> float:
        """log L[phi_i(k), phi_i(k-1)] (k >= 1)."""
        m = self.branch_models[i]
        m.ensure(0, k + 2)
        return float(m.arrays()[5][k])

    def log_mu_branch(self, i: int, k: int) -> float:
        return self.measure.log_mu(BranchVertex(i, k))

    def log_mu_vertex(self, v) -> float:
        return self.measure.log_mu(v)

    def log_mass(self, Q: DualSet) -> float:
        gm = self.measure
        parts = []
        if Q.seg is not None:
            i, a, b = Q.seg
            return gm.branch_log_segment(i, a, math.inf if b is None else b)
        m = Q.mask
        while m:
            j = (m & -m).bit_length() - 1
            m &= m - 1
            parts.append(gm.log_center[j])
        for i, e in enumerate(Q.ext):
            if e == FULL:
                parts.append(gm.branch_log_total(i))
            elif e >= 0:
                parts.append(gm.branch_log_prefix(i, e))
        return logsumexp(np.asarray(parts, float)) if parts else -math.inf

    def packed(self, need: int = 0):
        """Arrays for the compiled kernel; branch windows cover ``need``."""
        if need:
            self.ensure_depth(need)
        key = tuple(m.arrays()[1].shape[0] for m in self.branch_models)
        if self._packed is not None and self._packed[0] == key:
            return self._packed[1]
        g = self.graph
        N = g.n_branches
        W = max(key) if N else 1
        blm, bL, bR, blb, bla, bTR = (np.full((max(N, 1), W), -np.inf) for _ in range(6))
        brt = np.full(max(N, 1), -np.inf)
        btot = np.full(max(N, 1), -np.inf)
        blen = np.zeros(max(N, 1), dtype=np.int64)
        for i, m in enumerate(self.branch_models):
            lo, lm, L, R, lb, la, lt, rt, TL, TR = m.arrays()
            n = lm.shape[0]
            blm[i, :n], bL[i, :n], bR[i, :n] = lm, L, R
            blb[i, :n], bla[i, :n], bTR[i, :n] = lb, la, TR
            brt[i] = rt
            btot[i] = m.mu.log_total
            blen[i] = n
        att = np.array([b.attach for b in g.branches] or [0], dtype=np.int64)
        off = self.measure.branch_offset if N else np.zeros(1)
        nbr = np.array([[(g.adj[j] >> l) & 1 for l in range(len(g.center))]
                        for j in range(len(g.center))], dtype=np.int64)
        arr = (g.log_mu_center.astype(float), g.log_rate.astype(float), nbr, att,
               self._lout0 if N else np.zeros(1), self._lin0 if N else np.zeros(1),
               np.asarray(off, float), blm, bL, bR, blb, bla, bTR, brt, btot, blen)
        self._packed = (key, arr)
        return arr


def _gmodel(obj, window: int = 64) -> GraphDualModel:
    if isinstance(obj, GraphDualModel):
        return obj
    if isinstance(obj, GraphMeasure):
        return GraphDualModel(obj.graph, window)
    if isinstance(obj, GraphModel):
        return GraphDualModel(obj, window)
    raise TypeError(f"expected a GraphModel, GraphMeasure or GraphDualModel, got {type(obj)}")


# -- transitions -----------------------------------------------------------

def _log_rate(m: GraphDualModel, lq: float, target: DualSet, lbase: float) -> float:
    return m.log_mass(target) - lq + lbase


def dual_log_transitions(Q: DualSet, model) -> list[tuple[DualSet, float]]:
    """(target, log rate) pairs in canonical order: center growth, branch
    growth, branch-tip removal, center-vertex removal (components ordered
    by smallest vertex, then detached branches), segment moves (grow
    toward the center, grow outward, shrink inner end, shrink outer end)."""
    m = _gmodel(model)
    g = m.graph
    if Q == m.full_state():
        raise AbsorbedState("no transitions out of the full set")
    lq = m.log_mass(Q)
    out = []
    nc = len(g.center)
    if Q.seg is None:
        mask, ext = Q.mask, list(Q.ext)
        # growth at the center
        for j in range(nc):
            if (mask >> j) & 1:
                continue
            inner = [g.log_rate[j, l] for l in range(nc) if (mask >> l) & 1 and (g.adj[j] >> l) & 1]
            if inner:
                out.append((DualSet(mask | (1 << j), Q.ext), None, logsumexp(np.asarray(inner))))
        # growth along branches
        for i, b in enumerate(g.branches):
            e = ext[i]
            if e == FULL or not (mask >> b.attach) & 1:
                continue
            base = m._lin0[i] if e == EMPTY else m.log_death(i, e + 1)
            out.append((DualSet(mask, _set(Q.ext, i, e + 1 if e >= 0 else 0)), None, base))
        # removal of a branch tip
        for i, e in enumerate(ext):
            if e >= 0:
                out.append((DualSet(mask, _set(Q.ext, i, e - 1 if e > 0 else EMPTY)), None,
                            m.log_birth(i, e)))
        # removal of a center vertex
        for j in range(nc):
            if not (mask >> j) & 1:
                continue
            outside = [g.log_rate[j, l] for l in range(nc)
                       if not (mask >> l) & 1 and (g.adj[j] >> l) & 1]
            here = g.branches_at(j) if g.n_branches else []
            outside += [m._lout0[i] for i in here if ext[i] == EMPTY]
            if not outside:
                continue
            lbase = logsumexp(np.asarray(outside))
            for comp in _components(mask & ~(1 << j), g.adj):
                e2 = tuple(e if (comp >> g.branches[i].attach) & 1 else EMPTY
                           for i, e in enumerate(ext))
                out.append((DualSet(comp, e2), None, lbase))
            for i in here:
                if ext[i] != EMPTY:
                    out.append((DualSet(0, (EMPTY,) * g.n_branches,
                                        (i, 0, None if ext[i] == FULL else ext[i])), None, lbase))
    else:
        i, a, b = Q.seg
        br = g.branches[i]
        none = (EMPTY,) * g.n_branches
        if a >= 1:
            out.append((DualSet(0, none, (i, a - 1, b)), None, m.log_birth(i, a - 1)))
        else:
            out.append((DualSet(1 << br.attach, _set(none, i, FULL if b is None else b)), None,
                        m._lout0[i]))
        if b is not None:
            out.append((DualSet(0, none, (i, a, b + 1)), None, m.log_death(i, b + 1)))
        if b is None or a < b:
            lb_in = m.log_death(i, a) if a >= 1 else m._lin0[i]
            out.append((DualSet(0, none, (i, a + 1, b)), None, lb_in))
        if b is not None and a < b:
            out.append((DualSet(0, none, (i, a, b - 1)), None, m.log_birth(i, b)))
    return [(t, _log_rate(m, lq, t, lbase)) for t, _, lbase in out]


def _set(t: tuple, i: int, v: int) -> tuple:
    t = list(t)
    t[i] = v
    return tuple(t)


def dual_transitions(Q: DualSet, model) -> list[tuple[DualSet, float]]:
    """(target, rate) pairs of the dual generator from Q (see module doc)."""
    return [(t, float(np.exp(lr))) for t, lr in dual_log_transitions(Q, model)]


class GraphDual:
    """Row oracle of the graph dual, with the explosion hooks used by the
    generic coupled construction."""

    def __init__(self, model):
        self.model = _gmodel(model)
        self._full = self.model.full_state()

    def row(self, Q: DualSet):
        if Q == self._full:
            return []
        return dual_transitions(Q, self.model)

    def total_rate(self, Q) -> float:
        return sum(r for _, r in self.row(Q))

    def full_state(self) -> DualSet:
        return self._full

    def explosion_due(self, Q: DualSet, policy: ExplosionPolicy):
        """Branch index whose outer end must explode now, else None."""
        m = self.model
        ends = [(i, e) for i, e in enumerate(Q.ext) if e >= 0]
        if Q.seg is not None and Q.seg[2] is not None:
            ends = [(Q.seg[0], Q.seg[2])]
        for i, k in ends:
            if k < policy.M:
                continue
            bm = m.branch_models[i]
            bm.ensure(0, k + GK.N_FF + 4)
            if bm.arrays()[9][k] < math.log(policy.delta):
                return i
        return None

    def fast_forward_log_rates(self, Q: DualSet, i: int, n: int):
        k = Q.seg[2] if Q.seg is not None else Q.ext[i]
        bm = self.model.branch_models[i]
        bm.ensure(0, k + n + 2)
        return bm.arrays()[5][k + 1:k + 1 + n]

    @staticmethod
    def explode(Q: DualSet, i: int) -> DualSet:
        if Q.seg is not None:
            return DualSet(Q.mask, Q.ext, (Q.seg[0], Q.seg[1], None))
        return DualSet(Q.mask, _set(Q.ext, i, FULL))


class GraphPrimal:
    """Row oracle of the primal chain on the graph. Center vertices are
    center indices; branch vertices are BranchVertex(i, k)."""

    def __init__(self, model):
        self.model = _gmodel(model)

    def row(self, x):
        m = self.model
        g = m.graph
        if isinstance(x, BranchVertex):
            i, k = x
            down = (g.branches[i].attach, m._lin0[i]) if k == 0 else \
                (BranchVertex(i, k - 1), m.log_death(i, k))
            up = (BranchVertex(i, k + 1), m.log_birth(i, k))
            return [(down[0], float(np.exp(down[1]))), (up[0], float(np.exp(up[1])))]
        j = int(x)
        out = [(l, float(np.exp(g.log_rate[j, l]))) for l in range(len(g.center))
               if (g.adj[j] >> l) & 1]
        out += [(BranchVertex(i, 0), float(g.branches[i].out0)) for i in g.branches_at(j)]
        return out

    def total_rate(self, x) -> float:
        return sum(r for _, r in self.row(x))


class GraphKernel:
    """Lambda(Q, .) = mu restricted to Q, renormalized (Delta_i carry no mass)."""

    def __init__(self, model):
        self.model = _gmodel(model)

    def log_mass(self, Q: DualSet) -> float:
        return self.model.log_mass(Q)

    def log_prob(self, Q: DualSet, x) -> float:
        if x not in Q:
            return -math.inf
        lq = self.log_mass(Q)
        if lq == -math.inf:
            raise EmptyIntersection(f"{Q} carries no mass")
        return self.model.log_mu_vertex(x) - lq

    def prob(self, Q, x) -> float:
        return float(np.exp(self.log_prob(Q, x)))

    def support_points(self, Q: DualSet, reach: int):
        """Vertices of Q, branch vertices only up to depth ``reach``."""
        if Q.seg is not None:
            i, a, b = Q.seg
            hi = reach if b is None else min(b, reach)
            return [BranchVertex(i, k) for k in range(a, hi + 1)]
        pts = [j for j in range(len(self.model.graph.center)) if (Q.mask >> j) & 1]
        for i, e in enumerate(Q.ext):
            hi = reach if e == FULL else min(e, reach)
            pts += [BranchVertex(i, k) for k in range(0, hi + 1)]
        return pts


def enumerate_sets(graph: GraphModel, depth: int, *, full: bool = True,
                   segments: bool = True) -> list[DualSet]:
    """All dual sets whose finite branch extents stay within ``depth``
    (center subsets must be connected; for exhaustive sweeps keep the center small)."""
    nc = len(graph.center)
    N = graph.n_branches
    choices = list(range(depth + 1)) + ([FULL] if full else [])
    out = []
    for mask in range(1, 1 << nc):
        if not _connected(mask, graph.adj):
            continue
        free = [i for i in range(N) if (mask >> graph.branches[i].attach) & 1]
        combos = [()]
        for _ in free:
            combos = [c + (e,) for c in combos for e in [EMPTY] + choices]
        for c in combos:
            ext = [EMPTY] * N
            for i, e in zip(free, c):
                ext[i] = e
            out.append(DualSet(mask, tuple(ext)))
    if segments:
        none = (EMPTY,) * N
        for i in range(N):
            for a in range(depth + 1):
                for b in range(a, depth + 1):
                    out.append(DualSet(0, none, (i, a, b)))
                if full:
                    out.append(DualSet(0, none, (i, a, None)))
    return out


# -- comparison generators ---------------------------------------------------

@dataclass(frozen=True)
class BranchComparisonRates:
    """Birth-death comparison rates along branch i.

    ``n is None``: the chain L^i on N, ``up[p] = L^i_{p,p+1}`` and
    ``down[p] = L^i_{p,p-1}`` (``down[0] = 0``), built on the sets
    G^i_p = (whole compactified graph) minus phi_i([p+1, inf)).
    ``n = k``: the chain L^{i,k} on [k, inf), ``up[p-k]`` and ``down[p-k]``
    for the segment phi_i([k, p]).
    """

    branch: int
    n: int | None
    start: int
    up: np.ndarray
    down: np.ndarray


def branch_comparison(i: int, n, model, depth: int = 64) -> BranchComparisonRates:
    m = _gmodel(model)
    g = m.graph
    if not 0 <= i < g.n_branches:
        raise ValidationError(f"no branch {i + 1}")
    gm = m.measure
    m.ensure_depth(depth + 4)
    ps = np.arange(depth + 1)
    if n is None:
        # mass of G^i_p: everything except branch i beyond p
        rest = [gm.log_center[j] for j in range(len(g.center))]
        rest += [gm.branch_log_total(l) for l in range(g.n_branches) if l != i]
        lrest = logsumexp(np.asarray(rest))
        lG = np.array([np.logaddexp(lrest, gm.branch_log_prefix(i, p)) for p in range(depth + 2)])
        up = np.exp(lG[1:depth + 2] - lG[:depth + 1]
                    + np.array([m.log_death(i, p + 1) for p in ps]))
        down = np.zeros(depth + 1)
        down[1:] = np.exp(lG[:depth] - lG[1:depth + 1]
                          + np.array([m.log_birth(i, p) for p in ps[1:]]))
        return BranchComparisonRates(i, None, 0, up, down)
    n = int(n)
    ps = np.arange(n, n + depth + 1)
    lseg = np.array([gm.branch_log_segment(i, n, p) for p in ps])
    lmu = np.array([m.log_mu_branch(i, p) for p in ps])
    lmu1 = np.array([m.log_mu_branch(i, p + 1) for p in ps])
    up = np.exp(np.array([m.log_death(i, p + 1) for p in ps])) * (1 + np.exp(lmu1 - lseg))
    down = np.zeros(ps.shape[0])
    # segment phi([n, p]) loses its outer point at the rate of the edge out of it
    for k, p in enumerate(ps):
        if p > n:
            down[k] = -np.expm1(lmu[k] - lseg[k]) * math.exp(m.log_birth(i, p))
    return BranchComparisonRates(i, n, n, up, down)


# -- simulation --------------------------------------------------------------

TERMINALS = {GK.ABSORBED: "Absorbed", GK.HORIZON: "HorizonReached",
             GK.NO_EXPLOSION: "NoExplosionDetected"}


@dataclass
class GraphTrajectory:
    times: np.ndarray
    states: list                   # DualSet per event
    kinds: list                    # "start", "dual", "explosion"
    explosion_events: list         # (time, branch, stratum_before, stratum_after)
    absorption_time: float | None
    terminal: str
    end_time: float
    n_jumps: int
    deltas_ever: tuple             # branches whose Delta was ever in the set
    delta_drops: int               # transitions that detached a branch carrying its Delta
    martingale: float | None = None
    final: DualSet | None = None

    def strata(self) -> np.ndarray:
        return np.array([s.stratum for s in self.states], dtype=int)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# schema: sstlab.graph_dual/1\n")
        buf.write(f"# terminal: {self.terminal}; absorption_time: {self.absorption_time!r}\n")
        buf.write("time,state,stratum,kind\n")
        for t, s, k in zip(self.times, self.states, self.kinds):
            buf.write(f"{float(t)!r},{s.encode()},{s.stratum},{k}\n")
        return buf.getvalue()


def _pack_state(Q: DualSet, nc: int, N: int) -> np.ndarray:
    st = np.full(nc + N + 3, 0, dtype=np.int64)
    for j in range(nc):
        st[j] = (Q.mask >> j) & 1
    st[nc:nc + N] = Q.ext
    if Q.seg is None:
        st[nc + N:] = (-1, 0, 0)
    else:
        i, a, b = Q.seg
        st[nc + N:] = (i, a, GK.HALF if b is None else b)
    return st


def _unpack_state(st, nc: int, N: int) -> DualSet:
    mask = 0
    for j in range(nc):
        if st[j]:
            mask |= 1 << j
    ext = tuple(int(v) for v in st[nc:nc + N])
    i, a, b = (int(v) for v in st[nc + N:nc + N + 3])
    seg = None if i < 0 else (i, a, None if b == GK.HALF else b)
    return DualSet(mask, ext, seg)


def _ipar(policy: ExplosionPolicy, nc: int, N: int, K_mart: int, log_cap: int,
          stop_at_absorption: bool = True) -> np.ndarray:
    ip = np.zeros(8, dtype=np.int64)
    ip[GK.P_BUDGET] = policy.jump_budget
    ip[GK.P_K] = K_mart
    ip[GK.P_LOGCAP] = log_cap
    ip[GK.P_M] = policy.M
    ip[GK.P_NC] = nc
    ip[GK.P_NB] = N
    ip[GK.P_STOPABS] = int(stop_at_absorption)
    return ip


def _drive(m: GraphDualModel, ipar, fpar, st, ist, fst, us: UniformStream, log_cap: int):
    nc, N = int(ipar[GK.P_NC]), int(ipar[GK.P_NB])
    S = nc + N + 3
    C = GK.max_candidates(nc, N)
    cst = np.empty((C, S), dtype=np.int64)
    clr = np.empty(C)
    scratch = np.empty(4 * S + 4 * nc + 8, dtype=np.int64)
    cap = max(log_cap, 1)
    ev_t = np.empty(cap)
    ev_k = np.empty((cap, 2), dtype=np.int64)
    ev_s = np.empty((cap, S), dtype=np.int64)
    ist[GK.I_UPOS] = us.pos
    need = 0
    while True:
        arr = m.packed(need)
        status = GK.run_graph_dual(*arr, ipar, fpar, st, ist, fst, us.buf, ev_t, ev_k, ev_s,
                                   cst, clr, scratch)
        if status == GK.NEED_U:
            us.pos = int(ist[GK.I_UPOS])
            us.refill(us._block)
            ist[GK.I_UPOS] = us.pos
        elif status == GK.NEED_EXTEND:
            depth = int(ist[GK.I_DEPTH])
            need = max(2 * depth, depth + 2 * GK.N_FF + 8)
        elif status == GK.NEED_LOG:
            n = ev_t.shape[0]
            ev_t = np.concatenate([ev_t, np.empty(n)])
            ev_k = np.concatenate([ev_k, np.empty((n, 2), dtype=np.int64)])
            ev_s = np.concatenate([ev_s, np.empty((n, S), dtype=np.int64)])
        else:
            us.pos = int(ist[GK.I_UPOS])
            n = int(ist[GK.I_NEV])
            return status, ev_t[:n], ev_k[:n], ev_s[:n]


def _init(m: GraphDualModel, Q: DualSet, K_mart: int):
    g = m.graph
    Q.check(g)
    nc, N = len(g.center), g.n_branches
    st = _pack_state(Q, nc, N)
    ist = np.zeros(10, dtype=np.int64)
    ist[GK.I_EVER] = sum(1 << i for i in Q.deltas())
    fst = np.zeros(4)
    fst[GK.F_TABS] = np.nan
    fst[GK.F_F0] = GK.f_count(st, nc, N, K_mart) if K_mart else 0
    return st, ist, fst, nc, N


def _fpar(horizon: float, policy: ExplosionPolicy) -> np.ndarray:
    return np.array([float(horizon), math.log(policy.delta)])


def _mart(st, ist, fst, nc, N, K_mart) -> float:
    return float(GK.f_count(st, nc, N, K_mart) - fst[GK.F_F0] - fst[GK.F_INT])


def _bits(v: int) -> tuple:
    return tuple(i for i in range(64) if (v >> i) & 1)


def simulate_dual_graph(model, init: DualSet, horizon: float,
                        policy: ExplosionPolicy = ExplosionPolicy(),
                        seed: SeedSpec = SeedSpec(0), *, log_events: bool = True,
                        martingale_K: int = 0) -> GraphTrajectory:
    """Stratified simulation of the graph dual from ``init``.

    A branch end at depth >= M whose remaining tail time passes the policy
    test explodes: the extent becomes FULL (Delta_i added) after a
    fast-forward of N_FF explicit passages. ``martingale_K`` > 0 also
    accumulates the compensator of f(Q) = min(|Q ∩ B_K|, K), B_K being the
    center plus the first K vertices of every branch.
    """
    m = _gmodel(model)
    st, ist, fst, nc, N = _init(m, init, martingale_K)
    cap = 64 if log_events else 0
    ipar = _ipar(policy, nc, N, martingale_K, cap)
    us = UniformStream(seed, DUAL)
    status, ev_t, ev_k, ev_s = _drive(m, ipar, _fpar(horizon, policy), st, ist, fst, us, cap)
    states = [init] + [_unpack_state(s, nc, N) for s in ev_s]
    times = [0.0] + [float(t) for t in ev_t]
    kinds = ["start"]
    expl = []
    for n, (kind, aux) in enumerate(ev_k):
        if kind == GK.EV_EXPLODE:
            kinds.append("explosion")
            expl.append((times[n + 1], int(aux), states[n].stratum, states[n + 1].stratum))
        else:
            kinds.append("dual")
    tabs = fst[GK.F_TABS]
    return GraphTrajectory(np.asarray(times), states, kinds, expl,
                           None if math.isnan(tabs) else float(tabs), TERMINALS[status],
                           float(fst[GK.F_T]), int(ist[GK.I_JTOT]), _bits(int(ist[GK.I_EVER])),
                           int(ist[GK.I_DROP]),
                           _mart(st, ist, fst, nc, N, martingale_K) if martingale_K else None,
                           _unpack_state(st, nc, N))


@dataclass
class GraphBatch:
    terminal: np.ndarray
    absorption_time: np.ndarray
    n_explosions: np.ndarray
    n_jumps: np.ndarray
    deltas_ever: np.ndarray        # bitmask per trial
    delta_drops: np.ndarray
    final: list
    martingale: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def absorbed(self) -> np.ndarray:
        return ~np.isnan(self.absorption_time)

    def delta_count(self, i: int) -> int:
        """Number of trials in which Delta_i was ever part of the dual."""
        return int(np.sum((self.deltas_ever >> i) & 1))


def run_graph_trials(model, trials: int, horizon: float, policy: ExplosionPolicy, seed: int,
                     init: DualSet, *, martingale_K: int = 0, stop_at_absorption: bool = True,
                     threads: int = 1, first_trial: int = 0) -> GraphBatch:
    """Independent graph-dual runs; trial k uses stream ``first_trial + k``."""
    m = _gmodel(model)
    if policy.M < 10**6:
        m.packed(policy.M + 4 * GK.N_FF)
    out = {k: np.empty(trials, dtype=np.int64)
           for k in ("terminal", "n_explosions", "n_jumps", "ever", "drops")}
    tabs = np.full(trials, np.nan)
    mart = np.full(trials, np.nan)
    final = [None] * trials
    fpar = _fpar(horizon, policy)

    def one(k: int) -> None:
        st, ist, fst, nc, N = _init(m, init, martingale_K)
        ipar = _ipar(policy, nc, N, martingale_K, 0, stop_at_absorption)
        us = UniformStream(SeedSpec(seed, first_trial + k), DUAL, block=1024)
        status, *_ = _drive(m, ipar, fpar, st, ist, fst, us, 0)
        out["terminal"][k] = status
        out["n_explosions"][k] = ist[GK.I_NEXP]
        out["n_jumps"][k] = ist[GK.I_JTOT]
        out["ever"][k] = ist[GK.I_EVER]
        out["drops"][k] = ist[GK.I_DROP]
        tabs[k] = fst[GK.F_TABS]
        final[k] = _unpack_state(st, nc, N)
        if martingale_K:
            mart[k] = _mart(st, ist, fst, nc, N, martingale_K)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(one, range(trials)))
    else:
        for k in range(trials):
            one(k)
    return GraphBatch(out["terminal"], tabs, out["n_explosions"], out["n_jumps"], out["ever"],
                      out["drops"], final, mart,
                      meta={"seed": seed, "trials": trials, "horizon": horizon, "policy": policy})


def check_init(model, Q: DualSet, x) -> None:
    """Raise InconsistentInput unless x lies in Q."""
    if x not in Q:
        raise InconsistentInput(f"Lambda({Q}, {x}) = 0")
