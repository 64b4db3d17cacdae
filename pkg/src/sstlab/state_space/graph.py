"""Graphs with a finite center and finitely many infinite branches.

A ``GraphModel`` is the post-processed form: center vertices with rated
edges, and branches ``phi_i(0), phi_i(1), ...`` hanging off attach vertices.
``compute_center`` derives it from a raw description (explicit finite graph
plus rays running to infinity).

Branch rates are stored as a birth-death family on ``[0, inf)``:
``birth(k) = L[phi(k), phi(k+1)]`` and ``death(k) = L[phi(k), phi(k-1)]``.
The attach edge is described separately by ``out0 = L[q_i, phi(0)]`` and
``in0 = L[phi(0), q_i]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, NamedTuple, Sequence

import networkx as nx
import numpy as np

from ..errors import (DisconnectedGraph, EmptyCenter, InconsistentReversibility,
                      InvalidRates, ValidationError)
from .measure import LineMeasure
from .rates import BDRates

MAX_CENTER = 64
REVERSIBILITY_TOL = 1e-9


class ShiftedRates(BDRates):
    """Half-line family ``k -> base(k + shift)`` on ``[0, inf)``.

    With shift 1 a branch reproduces the right half of a chain on Z whose
    attach vertex plays the role of state 0.
    """

    family = "shifted"

    def __init__(self, base: BDRates, shift: int = 1):
        super().__init__(0, None)
        self.base = base
        self.shift = int(shift)

    def _log_b(self, n):
        return self.base.log_birth(np.asarray(n) + self.shift)

    def _log_a(self, n):
        n = np.asarray(n)
        return self.base.log_death(np.maximum(n, 1) + self.shift)

    def to_config(self) -> dict:
        return {"family": "shifted", "shift": self.shift, "base": self.base.to_config()}


class HeadTailRates(BDRates):
    """Half-line family with explicit first edges followed by a tail family.

    ``head_out[k]`` / ``head_in[k]`` rate edge k (between k and k+1); edge
    ``h + j`` uses ``tail.birth(j)`` / ``tail.death(j + 1)``.
    """

    family = "headtail"

    def __init__(self, head_out: Sequence[float], head_in: Sequence[float], tail: BDRates):
        super().__init__(0, None)
        ho = np.asarray(head_out, dtype=float)
        hi = np.asarray(head_in, dtype=float)
        if ho.shape != hi.shape or np.any(ho <= 0) or np.any(hi <= 0):
            raise InvalidRates("head rates must be positive and of equal length")
        self._ho, self._hin = np.log(ho), np.log(hi)
        self.tail = tail

    def _log_b(self, n):
        n = np.asarray(n)
        h = self._ho.shape[0]
        out = np.empty(n.shape)
        head = n < h
        out[head] = self._ho[n[head]]
        if np.any(~head):
            out[~head] = self.tail.log_birth(n[~head] - h)
        return out

    def _log_a(self, n):
        n = np.asarray(n)
        h = self._hin.shape[0]
        out = np.zeros(n.shape)
        head = (n >= 1) & (n <= h)
        out[head] = self._hin[n[head] - 1]
        rest = n > h
        if np.any(rest):
            out[rest] = self.tail.log_death(n[rest] - h)
        return out


@dataclass(frozen=True)
class Branch:
    attach: int           # index into GraphModel.center
    out0: float           # L[q_i, phi(0)]
    in0: float            # L[phi(0), q_i]
    rates: BDRates        # half-line family along the branch
    labels: tuple = ()    # explicit labels of the first branch vertices, if any

    def log_out(self, k: int) -> float:
        """log L[phi(k), phi(k+1)]."""
        return float(self.rates.log_birth(k))

    def log_in(self, k: int) -> float:
        """log L[phi(k+1), phi(k)]."""
        return float(self.rates.log_death(k + 1))


class BranchVertex(NamedTuple):
    branch: int
    k: int


@dataclass
class GraphModel:
    """Validated branch graph; see module docstring for conventions."""

    center: tuple
    edges: dict            # (j, l) center index pairs with j < l -> (L_jl, L_lj)
    branches: tuple
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.center = tuple(self.center)
        self.branches = tuple(self.branches)
        nc = len(self.center)
        if nc == 0:
            raise EmptyCenter("graph center is empty; use the interval dual on Z")
        if nc > MAX_CENTER:
            raise ValidationError(f"center has {nc} > {MAX_CENTER} vertices")
        if len(set(self.center)) != nc:
            raise ValidationError("duplicate center vertex labels")
        norm = {}
        for (j, l), (r1, r2) in self.edges.items():
            if not (0 <= j < nc and 0 <= l < nc) or j == l:
                raise ValidationError(f"bad center edge ({j}, {l})")
            if not (r1 > 0 and r2 > 0 and math.isfinite(r1) and math.isfinite(r2)):
                raise InvalidRates(f"center edge ({self.center[j]}, {self.center[l]}) "
                                   "needs finite positive rates")
            key, val = ((j, l), (float(r1), float(r2))) if j < l else ((l, j), (float(r2), float(r1)))
            if key in norm:
                raise ValidationError(f"duplicate edge {key}")
            norm[key] = val
        self.edges = norm
        for b in self.branches:
            if not 0 <= b.attach < nc:
                raise ValidationError(f"branch attach index {b.attach} out of range")
            if not (b.out0 > 0 and b.in0 > 0):
                raise InvalidRates("attach edge rates must be positive")
            if b.rates.lo != 0 or b.rates.hi is not None:
                raise ValidationError("branch rates must live on [0, inf)")
        # log rate matrix and adjacency masks on the center
        lr = np.full((nc, nc), -np.inf)
        adj = [0] * nc
        for (j, l), (r1, r2) in self.edges.items():
            lr[j, l], lr[l, j] = math.log(r1), math.log(r2)
            adj[j] |= 1 << l
            adj[l] |= 1 << j
        self.log_rate = lr
        self.adj = tuple(adj)
        g = nx.Graph()
        g.add_nodes_from(range(nc))
        g.add_edges_from(self.edges)
        if not nx.is_connected(g):
            raise DisconnectedGraph("center graph is not connected")
        self.nx_center = g
        self.log_mu_center = self._solve_reversible()

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def _solve_reversible(self) -> np.ndarray:
        """Log mu on the center from a BFS tree; every edge is then checked."""
        nc = len(self.center)
        lm = np.full(nc, np.nan)
        lm[0] = 0.0
        for u, v in nx.bfs_edges(self.nx_center, 0):
            lm[v] = lm[u] + self.log_rate[u, v] - self.log_rate[v, u]
        worst = 0.0
        for (j, l) in self.edges:
            d = (lm[j] + self.log_rate[j, l]) - (lm[l] + self.log_rate[l, j])
            worst = max(worst, abs(math.expm1(d)))
        if worst > REVERSIBILITY_TOL:
            raise InconsistentReversibility(
                f"cycle rate-ratio products deviate from 1 (relative {worst:.3g})")
        return lm

    def branches_at(self, j: int) -> list[int]:
        return [i for i, b in enumerate(self.branches) if b.attach == j]

    def degree(self, j: int) -> int:
        return bin(self.adj[j]).count("1") + len(self.branches_at(j))


@dataclass
class GraphMeasure:
    """Stationary measure of a GraphModel (unnormalized, log space).

    Center vertex 0 has log weight 0. Branch i vertex k has log weight
    ``branch_offset[i] + branch[i].log_mu(k)``.
    """

    graph: GraphModel
    log_center: np.ndarray
    branch: list            # LineMeasure per branch (reference k = 0)
    branch_offset: np.ndarray
    log_total: float

    def log_mu(self, v) -> float:
        if isinstance(v, BranchVertex):
            return float(self.branch_offset[v.branch] + self.branch[v.branch].log_mu(v.k))
        return float(self.log_center[v])

    def branch_log_prefix(self, i: int, k: int) -> float:
        """log mu(phi_i([0, k]))."""
        if k < 0:
            return -math.inf
        return float(self.branch_offset[i] + self.branch[i].log_left(k))

    def branch_log_suffix(self, i: int, k: int) -> float:
        """log mu(phi_i([k, inf)))."""
        return float(self.branch_offset[i] + self.branch[i].log_right(max(k, 0)))

    def branch_log_segment(self, i: int, a: int, b) -> float:
        return float(self.branch_offset[i] + self.branch[i].log_mass(a, b))

    def branch_log_total(self, i: int) -> float:
        return float(self.branch_offset[i] + self.branch[i].log_total)


def mu_graph(graph: GraphModel, branch_cutoff: int = 64) -> GraphMeasure:
    """Stationary measure over the center plus branches (with adaptive tails)."""
    offs = np.empty(graph.n_branches)
    bms = []
    for i, b in enumerate(graph.branches):
        offs[i] = graph.log_mu_center[b.attach] + math.log(b.out0) - math.log(b.in0)
        bms.append(LineMeasure(b.rates, (0, max(int(branch_cutoff), 1))))
    parts = [graph.log_mu_center] + [[offs[i] + bms[i].log_total] for i in range(len(bms))]
    total = float(np.logaddexp.reduce(np.concatenate([np.asarray(p, float) for p in parts])))
    return GraphMeasure(graph, graph.log_mu_center.copy(), bms, offs, total)


def detailed_balance_residual(graph: GraphModel, mu: GraphMeasure, depth: int = 64) -> float:
    """max |mu(p)L_pq - mu(q)L_qp| / max(...) over edges up to ``depth`` on branches."""
    worst = 0.0

    def rel(x, y):
        m = max(x, y)
        return abs(math.expm1(min(x, y) - m)) if m > -math.inf else 0.0

    for (j, l) in graph.edges:
        worst = max(worst, rel(mu.log_center[j] + graph.log_rate[j, l],
                               mu.log_center[l] + graph.log_rate[l, j]))
    for i, b in enumerate(graph.branches):
        worst = max(worst, rel(mu.log_center[b.attach] + math.log(b.out0),
                               mu.log_mu(BranchVertex(i, 0)) + math.log(b.in0)))
        for k in range(depth):
            worst = max(worst, rel(mu.log_mu(BranchVertex(i, k)) + b.log_out(k),
                                   mu.log_mu(BranchVertex(i, k + 1)) + b.log_in(k)))
    return worst


# -- raw specs and the center ---------------------------------------------

@dataclass(frozen=True)
class Ray:
    """Infinite path starting next to ``anchor``: anchor -> r0 -> r1 -> ..."""
    anchor: Hashable
    out0: float
    in0: float
    rates: BDRates


@dataclass(frozen=True)
class GraphSpec:
    """Raw graph: explicit rated edges ``(u, v) -> (L_uv, L_vu)`` plus rays."""
    edges: dict
    rays: tuple = ()
    vertices: tuple = ()


def _hull(g: nx.Graph, terminals: set) -> set:
    """Union of all simple paths between terminal vertices (block-cut tree)."""
    if len(terminals) == 1:
        return set(terminals)
    blocks = [frozenset(b) for b in nx.biconnected_components(g)]
    cuts = set(nx.articulation_points(g))
    t = nx.Graph()
    for bi, b in enumerate(blocks):
        t.add_node(("B", bi))
        for c in b & cuts:
            t.add_edge(("B", bi), ("C", c))
    keep = set()
    for v in terminals:
        if v in cuts:
            keep.add(("C", v))
        else:
            bi = next(k for k, b in enumerate(blocks) if v in b)
            t.add_edge(("T", v), ("B", bi))
            keep.add(("T", v))
    while True:
        leaves = [n for n in t if t.degree(n) <= 1 and n not in keep]
        if not leaves:
            break
        t.remove_nodes_from(leaves)
    hull = set()
    for n in t:
        if n[0] in ("C", "T"):
            hull.add(n[1])
        elif t.degree(n) >= 2:
            hull |= blocks[n[1]]
    return hull


def compute_center(spec: GraphSpec) -> GraphModel:
    """Center = convex hull of the vertices of degree != 2; the rest must be
    rays (possibly preceded by explicit degree-2 vertices)."""
    g = nx.Graph()
    g.add_nodes_from(spec.vertices)
    rate = {}
    for (u, v), (r1, r2) in spec.edges.items():
        if u == v:
            raise ValidationError(f"self loop at {u!r}")
        g.add_edge(u, v)
        rate[(u, v)], rate[(v, u)] = float(r1), float(r2)
    for r in spec.rays:
        g.add_node(r.anchor)
    if g.number_of_nodes() == 0:
        raise ValidationError("empty graph")
    if not nx.is_connected(g):
        raise DisconnectedGraph("graph is not connected")
    rays_at: dict = {}
    for k, r in enumerate(spec.rays):
        rays_at.setdefault(r.anchor, []).append(k)
    deg = {v: g.degree(v) + len(rays_at.get(v, ())) for v in g}
    terminals = {v for v, d in deg.items() if d != 2}
    if not terminals:
        raise EmptyCenter("every vertex has degree 2 (line or cycle); no center")
    hull = _hull(g, terminals)
    order = sorted(hull, key=lambda v: (str(type(v)), v))
    index = {v: j for j, v in enumerate(order)}
    edges = {}
    for (u, v) in g.edges:
        if u in hull and v in hull:
            edges[(index[u], index[v])] = (rate[(u, v)], rate[(v, u)])
    branches = []
    for r in (spec.rays[k] for v in order for k in rays_at.get(v, ())):
        branches.append(Branch(index[r.anchor], r.out0, r.in0, r.rates))
    rest = g.subgraph(set(g) - hull)
    for comp in nx.connected_components(rest):
        branches.append(_path_branch(g, comp, hull, index, rate, rays_at, spec.rays))
    return GraphModel(tuple(order), edges, tuple(branches),
                      meta={"labels": {v: j for v, j in index.items()}})


def _path_branch(g, comp, hull, index, rate, rays_at, rays) -> Branch:
    """Turn an explicit degree-2 path leaving the hull into a branch."""
    attach_edges = [(u, v) for u in comp for v in g.neighbors(u) if v in hull]
    ray_ids = [k for u in comp for k in rays_at.get(u, ())]
    if len(attach_edges) != 1 or len(ray_ids) != 1:
        raise ValidationError(
            f"component {sorted(map(str, comp))} of G minus its center is not a half-line")
    first, q = attach_edges[0]
    path = [first]
    seen = {first}
    while True:
        nxt = [w for w in g.neighbors(path[-1]) if w in comp and w not in seen]
        if not nxt:
            break
        path.append(nxt[0])
        seen.add(nxt[0])
    ray = rays[ray_ids[0]]
    if len(path) != len(comp) or ray.anchor != path[-1]:
        raise ValidationError("branch path does not end at its ray anchor")
    head_out = [rate[(path[k], path[k + 1])] for k in range(len(path) - 1)] + [ray.out0]
    head_in = [rate[(path[k + 1], path[k])] for k in range(len(path) - 1)] + [ray.in0]
    rates = HeadTailRates(head_out, head_in, ray.rates)
    return Branch(index[q], rate[(q, first)], rate[(first, q)], rates, tuple(path))


def star_graph(families: Sequence[BDRates], shift: int = 1) -> GraphModel:
    """Single center vertex with one branch per Z-family (right half, shifted).

    Branch i reproduces states ``shift, shift+1, ...`` of ``families[i]``, its
    attach edge being the edge ``shift-1 <-> shift``.
    """
    branches = []
    for f in families:
        out0 = math.exp(float(f.log_birth(shift - 1)))
        in0 = math.exp(float(f.log_death(shift)))
        branches.append(Branch(0, out0, in0, ShiftedRates(f, shift)))
    return GraphModel(("v0",), {}, tuple(branches))


def mirrored_rates(family: BDRates, shift: int = 1) -> BDRates:
    """Left half of a Z-family read outward: vertex k is state ``-(k+shift)``."""
    from .rates import CustomRates

    def birth(k):
        return np.exp(family.log_death(-(np.asarray(k) + shift)))

    def death(k):
        return np.exp(family.log_birth(-(np.asarray(k) + shift)))

    return CustomRates(birth, death, lo=0)


def half_line(family: BDRates, side: str) -> BDRates:
    """The ``right`` (n >= 0) or ``left`` (n <= 0) half of a Z-family as a
    half-line family whose vertex 0 is state 0."""
    if side == "right":
        return ShiftedRates(family, 0)
    if side == "left":
        return mirrored_rates(family, 0)
    raise ValueError(f"side must be 'right' or 'left', not {side!r}")


def line_as_graph(family: BDRates) -> GraphModel:
    """Z viewed as a center {0} with two branches (right and left halves)."""
    right = Branch(0, math.exp(float(family.log_birth(0))),
                   math.exp(float(family.log_death(1))), ShiftedRates(family, 1))
    left = Branch(0, math.exp(float(family.log_death(0))),
                  math.exp(float(family.log_birth(-1))), mirrored_rates(family))
    return GraphModel((0,), {}, (right, left))
