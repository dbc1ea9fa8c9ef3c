"""Graph-side local statistics: oriented balls, tangles, the P functional.

Conventions on graphs with cycles (on tree-like balls they all agree with
the exact definitions):

* The oriented ball of ``e = (u, v)`` is the BFS ball around ``v`` in the
  graph with the edge ``{u, v}`` removed. ``Y_t(e)`` counts, by spin, the
  vertices at BFS distance t; ``Psi_t(e)`` sums their weights.
* ``is_tree`` holds when that ball (the induced subgraph on vertices within
  distance r) is acyclic and does not reach ``u``, i.e. the ball together
  with ``e`` is a tree.
* In the P functional, the edges ``f`` at oriented distance t are the edges
  from BFS layer t-1 into layer t (``f = e`` for t = 0) and their outward
  successors go from layer t to layer t+1. The deleted-ball quantities are
  computed after removing every edge with both endpoints within distance t
  of ``v`` in the full graph.

Kernels are compiled with numba and operate on the CSR adjacency
``ptr, adj`` shared with the non-backtracking operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numba
import numpy as np

from .generator import ColoredGraph
from .model import moments
from .nb_operator import NbOperator, build

_INV_SQRT2 = 1 / math.sqrt(2)


# ----------------------------------------------------------------- kernels


@numba.njit(cache=True)
def _bfs(ptr, adj, src, radius, bu, bv, gdist, gstamp, gcur, tb, dist, stamp, cur, queue):
    """BFS from ``src`` up to ``radius``; returns the number of visited vertices.

    The undirected edge ``{bu, bv}`` is skipped. With ``tb >= 0`` every edge
    whose endpoints both have ``gdist <= tb`` (valid where ``gstamp == gcur``)
    is skipped too. Visited vertices end up in ``queue`` in BFS order.
    """
    stamp[src] = cur
    dist[src] = 0
    queue[0] = src
    head = 0
    tail = 1
    while head < tail:
        x = queue[head]
        head += 1
        d = dist[x]
        if d >= radius:
            continue
        for j in range(ptr[x], ptr[x + 1]):
            y = adj[j]
            if (x == bu and y == bv) or (x == bv and y == bu):
                continue
            if tb >= 0 and gstamp[x] == gcur and gstamp[y] == gcur:
                if gdist[x] <= tb and gdist[y] <= tb:
                    continue
            if stamp[y] != cur:
                stamp[y] = cur
                dist[y] = d + 1
                queue[tail] = y
                tail += 1
    return tail


@numba.njit(cache=True)
def _ball_edges(ptr, adj, queue, count, bu, bv, stamp, cur):
    """Edges of the induced subgraph on the visited set, minus ``{bu, bv}``."""
    twice = 0
    for i in range(count):
        x = queue[i]
        for j in range(ptr[x], ptr[x + 1]):
            y = adj[j]
            if (x == bu and y == bv) or (x == bv and y == bu):
                continue
            if stamp[y] == cur:
                twice += 1
    return twice // 2


@numba.njit(cache=True)
def _edge_balls(ptr, adj, tails, heads, spins, weights, edges, r):
    n = len(ptr) - 1
    out = np.zeros((len(edges), r + 1, 4))
    is_tree = np.zeros(len(edges), dtype=np.bool_)
    dist = np.zeros(n, dtype=np.int64)
    stamp = np.zeros(n, dtype=np.int64)
    queue = np.zeros(n, dtype=np.int64)
    dummy = np.zeros(1, dtype=np.int64)
    for i in range(len(edges)):
        e = edges[i]
        u = tails[e]
        v = heads[e]
        cur = i + 1
        cnt = _bfs(ptr, adj, v, r, u, v, dummy, dummy, -1, -1, dist, stamp, cur, queue)
        for q in range(cnt):
            x = queue[q]
            d = dist[x]
            if spins[x] > 0:
                out[i, d, 0] += 1.0
                out[i, d, 2] += weights[x]
            else:
                out[i, d, 1] += 1.0
                out[i, d, 3] += weights[x]
        m_ball = _ball_edges(ptr, adj, queue, cnt, u, v, stamp, cur)
        is_tree[i] = m_ball == cnt - 1 and stamp[u] != cur
    return out, is_tree


@numba.njit(cache=True)
def _vertex_cycles(ptr, adj, r):
    n = len(ptr) - 1
    cycles = np.zeros(n, dtype=np.int64)
    dist = np.zeros(n, dtype=np.int64)
    stamp = np.zeros(n, dtype=np.int64)
    queue = np.zeros(n, dtype=np.int64)
    dummy = np.zeros(1, dtype=np.int64)
    for v in range(n):
        cnt = _bfs(ptr, adj, v, r, -1, -1, dummy, dummy, -1, -1, dist, stamp, v + 1, queue)
        cycles[v] = _ball_edges(ptr, adj, queue, cnt, -1, -1, stamp, v + 1) - cnt + 1
    return cycles


@numba.njit(cache=True)
def _p_edges(ptr, adj, tails, heads, spins, weights, edges, ell):
    """Raw P (k = 1, 2; without the 1/sqrt2) and S_ell for each listed edge."""
    n = len(ptr) - 1
    P = np.zeros((len(edges), 2))
    S = np.zeros(len(edges))
    gdist = np.zeros(n, dtype=np.int64)
    gstamp = np.zeros(n, dtype=np.int64)
    gqueue = np.zeros(n, dtype=np.int64)
    odist = np.zeros(n, dtype=np.int64)
    ostamp = np.zeros(n, dtype=np.int64)
    oqueue = np.zeros(n, dtype=np.int64)
    sdist = np.zeros(n, dtype=np.int64)
    sstamp = np.zeros(n, dtype=np.int64)
    squeue = np.zeros(n, dtype=np.int64)
    kids = np.zeros(n, dtype=np.int64)
    A1 = np.zeros(n)
    A2 = np.zeros(n)
    C = np.zeros(n)
    dummy = np.zeros(1, dtype=np.int64)
    scur = 0
    for i in range(len(edges)):
        e = edges[i]
        u = tails[e]
        v = heads[e]
        cur = i + 1
        _bfs(ptr, adj, v, ell - 1, -1, -1, dummy, dummy, -1, -1, gdist, gstamp, cur, gqueue)
        ocnt = _bfs(ptr, adj, v, ell, u, v, dummy, dummy, -1, -1, odist, ostamp, cur, oqueue)
        for q in range(ocnt):
            if odist[oqueue[q]] == ell:
                S[i] += 1.0
        tot1 = 0.0
        tot2 = 0.0
        for q in range(ocnt):
            y = oqueue[q]
            t = odist[y]
            if t >= ell:
                continue
            # number of edges f into y from layer t - 1 (f = e when t = 0)
            mult = 0
            if t == 0:
                mult = 1
            else:
                for j in range(ptr[y], ptr[y + 1]):
                    x = adj[j]
                    if (x == u and y == v) or (x == v and y == u):
                        continue
                    if ostamp[x] == cur and odist[x] == t - 1:
                        mult += 1
            nk = 0
            for j in range(ptr[y], ptr[y + 1]):
                z = adj[j]
                if (y == u and z == v) or (y == v and z == u):
                    continue
                if ostamp[z] == cur and odist[z] == t + 1:
                    kids[nk] = z
                    nk += 1
            if nk < 2:
                continue
            depth = max(t, ell - t - 1)
            for c in range(nk):
                z = kids[c]
                scur += 1
                scnt = _bfs(ptr, adj, z, depth, y, z, gdist, gstamp, cur, t,
                            sdist, sstamp, scur, squeue)
                psi_p = 0.0
                psi_m = 0.0
                cnt_s = 0.0
                for q2 in range(scnt):
                    w = squeue[q2]
                    d = sdist[w]
                    if d == t:
                        if spins[w] > 0:
                            psi_p += weights[w]
                        else:
                            psi_m += weights[w]
                    if d == ell - t - 1:
                        cnt_s += 1.0
                A1[c] = psi_p + psi_m
                A2[c] = psi_p - psi_m
                C[c] = cnt_s
            sC = 0.0
            sA1 = 0.0
            sA2 = 0.0
            sCA1 = 0.0
            sCA2 = 0.0
            for c in range(nk):
                sC += C[c]
                sA1 += A1[c]
                sA2 += A2[c]
                sCA1 += C[c] * A1[c]
                sCA2 += C[c] * A2[c]
            tot1 += mult * (sC * sA1 - sCA1)
            tot2 += mult * (sC * sA2 - sCA2)
        P[i, 0] = tot1
        P[i, 1] = tot2
    return P, S


# ----------------------------------------------------------------- helpers


def _csr(op: NbOperator):
    idx = op.index
    return idx.out_ptr, op.head[idx.out_edges]


def _edge_array(op: NbOperator, edges) -> np.ndarray:
    if edges is None:
        return np.arange(op.dim, dtype=np.int64)
    arr = np.atleast_1d(np.asarray(edges, dtype=np.int64))
    if len(arr) and (arr.min() < 0 or arr.max() >= op.dim):
        raise ValueError(f"oriented edge id out of range [0, {op.dim})")
    return arr


# ----------------------------------------------------------------- edge balls


@dataclass(frozen=True, eq=False)
class EdgeNeighborhoodStats:
    """Oriented-ball statistics of one edge for t = 0..r.

    ``Y[t]`` and ``Psi[t]`` are (plus, minus) pairs.
    """

    edge: int
    Y: np.ndarray
    Psi: np.ndarray
    is_tree: bool

    @property
    def S(self) -> np.ndarray:
        return self.Y.sum(axis=1)

    @property
    def radius(self) -> int:
        return len(self.Y) - 1


def edge_balls(g: ColoredGraph, op: NbOperator, r: int, edges=None):
    """Arrays (Y, Psi, is_tree) of shapes (E, r+1, 2), (E, r+1, 2), (E,)."""
    if r < 0:
        raise ValueError("radius must be >= 0")
    ptr, adj = _csr(op)
    sel = _edge_array(op, edges)
    out, is_tree = _edge_balls(ptr, adj, op.tail, op.head, g.spins.astype(np.int64),
                               np.asarray(g.weights), sel, int(r))
    return out[:, :, :2], out[:, :, 2:], is_tree


def edge_ball(g: ColoredGraph, op: NbOperator, e: int, r: int) -> EdgeNeighborhoodStats:
    Y, Psi, tree = edge_balls(g, op, r, [e])
    return EdgeNeighborhoodStats(int(e), Y[0], Psi[0], bool(tree[0]))


# ----------------------------------------------------------------- tangles


@dataclass(frozen=True)
class TangleReport:
    radius: int
    vertices_with_cycle: int
    max_cycles: int
    is_tangle_free: bool


def ball_cycles(g: ColoredGraph, r: int, op: Optional[NbOperator] = None) -> np.ndarray:
    """Independent cycles (edges - vertices + 1) in each vertex's r-ball."""
    if r < 0:
        raise ValueError("radius must be >= 0")
    op = build(g) if op is None else op
    ptr, adj = _csr(op)
    return _vertex_cycles(ptr, adj, int(r))


def tangle_scan(g: ColoredGraph, ell: int, op: Optional[NbOperator] = None) -> TangleReport:
    cyc = ball_cycles(g, ell, op)
    mx = int(cyc.max()) if len(cyc) else 0
    return TangleReport(int(ell), int(np.count_nonzero(cyc > 0)), mx, mx <= 1)


# ----------------------------------------------------------------- P functional


@dataclass(frozen=True, eq=False)
class PValues:
    """P_{k,ell}(e) and S_{k,ell}(e) = S_ell(e) g_k(spin(e1)) w(e1); columns k = 1, 2."""

    edges: np.ndarray
    P: np.ndarray
    S: np.ndarray
    S_ell: np.ndarray


def p_functional_all(g: ColoredGraph, op: NbOperator, ell: int, edges=None) -> PValues:
    if ell < 1:
        raise ValueError("ell must be >= 1")
    ptr, adj = _csr(op)
    sel = _edge_array(op, edges)
    raw, s_ell = _p_edges(ptr, adj, op.tail, op.head, g.spins.astype(np.int64),
                          np.asarray(g.weights), sel, int(ell))
    tails = op.tail[sel]
    gw = g.weights[tails] * _INV_SQRT2
    S = np.column_stack([s_ell * gw, s_ell * gw * g.spins[tails]])
    return PValues(sel, raw * _INV_SQRT2, S, s_ell)


def p_functional(g: ColoredGraph, op: NbOperator, e: int, ell: int):
    """(P_1(e), P_2(e), S_1(e), S_2(e))."""
    pv = p_functional_all(g, op, ell, [e])
    return float(pv.P[0, 0]), float(pv.P[0, 1]), float(pv.S[0, 0]), float(pv.S[0, 1])


@dataclass(frozen=True, eq=False)
class IReport:
    """I_ell(v) = sum of P_{2,ell}(e) over edges into v, with class means.

    ``predicted`` is c_hat g_2(+) mu_2^(2 ell), the predicted mean for the
    + class (nan at or below the threshold, where it is undefined).
    """

    ell: int
    values: np.ndarray
    mean_plus: float
    mean_minus: float
    predicted: float

    @property
    def signs_match(self) -> bool:
        return self.mean_plus > 0 > self.mean_minus


def i_constant(a: float, b: float, law) -> float:
    """c_hat = (a+b)/2 phi1^2 phi3/phi2 rho/(mu2^2 - rho) mu2."""
    phi1, phi2, phi3 = (moments(law, j) for j in (1, 2, 3))
    rho = (a + b) / 2 * phi2
    mu2 = (a - b) / 2 * phi2
    if mu2**2 <= rho:
        return math.nan
    return (a + b) / 2 * phi1**2 * phi3 / phi2 * rho / (mu2**2 - rho) * mu2


def i_functional(g: ColoredGraph, op: NbOperator, ell: int, a: Optional[float] = None,
                 b: Optional[float] = None, law=None) -> IReport:
    """Vertex sums of P_2; class means use the true spins of ``g``."""
    pv = p_functional_all(g, op, ell)
    values = np.bincount(op.head[pv.edges], weights=pv.P[:, 1], minlength=g.n)
    plus = g.spins > 0
    mp = float(values[plus].mean()) if plus.any() else math.nan
    mm = float(values[~plus].mean()) if (~plus).any() else math.nan
    pred = math.nan
    if a is not None and b is not None and law is not None:
        c_hat = i_constant(a, b, law)
        mu2 = (a - b) / 2 * moments(law, 2)
        pred = c_hat * _INV_SQRT2 * mu2 ** (2 * ell)
    return IReport(int(ell), values, mp, mm, pred)


# ----------------------------------------------------------------- local averages


@dataclass(frozen=True)
class LocalFunctional:
    """A vertex functional that only looks at the ``radius``-ball of its vertex.

    ``fn(g, v)`` evaluates one vertex; ``batch(g)``, when given, returns all
    values at once and must agree with ``fn``.
    """

    name: str
    radius: int
    fn: Callable[[ColoredGraph, int], float]
    batch: Optional[Callable[[ColoredGraph], np.ndarray]] = None

    def values(self, g: ColoredGraph) -> np.ndarray:
        if self.batch is not None:
            return np.asarray(self.batch(g), dtype=float)
        return np.array([self.fn(g, v) for v in range(g.n)], dtype=float)


def local_average(g: ColoredGraph, tau: LocalFunctional) -> float:
    """(1/n) sum over vertices of tau(G, v)."""
    if g.n == 0:
        raise ValueError("empty graph")
    return float(tau.values(g).mean())


def _degree_one(g: ColoredGraph, v: int) -> float:
    return float(np.count_nonzero(g.edges == v))


def _tree_one(g: ColoredGraph, v: int) -> float:
    return float(ball_cycles(g, 1)[v] == 0)


DEGREE = LocalFunctional("degree", 1, _degree_one, lambda g: g.degrees())
ONE = LocalFunctional("one", 0, lambda g, v: 1.0, lambda g: np.ones(g.n))
BALL1_IS_TREE = LocalFunctional(
    "ball1_is_tree", 1, _tree_one, lambda g: (ball_cycles(g, 1) == 0).astype(float)
)


def diagnose_rows(g: ColoredGraph, op: NbOperator, r: int):
    """Rows ``(edge, t, Yp, Ym, PsiP, PsiM, S, is_tree)`` for every oriented edge."""
    Y, Psi, tree = edge_balls(g, op, r)
    for e in range(op.dim):
        for t in range(r + 1):
            yield (e, t, int(Y[e, t, 0]), int(Y[e, t, 1]), float(Psi[e, t, 0]),
                   float(Psi[e, t, 1]), int(Y[e, t].sum()), bool(tree[e]))
