"""Sampling degree-corrected SBM graphs and the plain-text graph file format."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .model import Balance, ModelParams

PAIR_LIMIT = 50_000


class CapacityError(RuntimeError):
    pass


class GraphFormatError(ValueError):
    """Raised by :func:`read_graph`; ``lineno`` is 1-based."""

    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class MalformedHeaderError(GraphFormatError):
    pass


class MalformedLineError(GraphFormatError):
    pass


class BadSpinError(GraphFormatError):
    pass


class BadWeightError(GraphFormatError):
    pass


class DuplicateEdgeError(GraphFormatError):
    pass


def _frozen(arr, dtype) -> np.ndarray:
    arr = np.array(arr, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ColoredGraph:
    """Undirected simple graph with a +/-1 spin and a positive weight per vertex.

    ``edges`` is an (m, 2) integer array with ``u < v`` on every row, sorted
    lexicographically.
    """

    n: int
    spins: np.ndarray
    weights: np.ndarray
    edges: np.ndarray

    def __post_init__(self):
        spins = _frozen(self.spins, np.int8)
        weights = _frozen(self.weights, np.float64)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if spins.shape != (self.n,) or weights.shape != (self.n,):
            raise ValueError("spins and weights must have length n")
        if not np.all(np.abs(spins) == 1):
            raise ValueError("spins must be +1 or -1")
        if not np.all(weights > 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be positive and finite")
        if len(edges):
            if edges.min() < 0 or edges.max() >= self.n:
                raise ValueError("edge endpoint out of range")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ValueError("self-loops are not allowed")
            edges = np.sort(edges, axis=1)
            order = np.lexsort((edges[:, 1], edges[:, 0]))
            edges = edges[order]
            if np.any(np.all(edges[1:] == edges[:-1], axis=1)):
                raise ValueError("parallel edges are not allowed")
        edges.setflags(write=False)
        object.__setattr__(self, "spins", spins)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "edges", edges)

    @property
    def m(self) -> int:
        return len(self.edges)

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def adjacency_lists(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges.tolist():
            adj[u].append(v)
            adj[v].append(u)
        return adj

    def with_spins(self, spins) -> "ColoredGraph":
        return ColoredGraph(self.n, spins, self.weights, self.edges)

    def relabeled(self, perm) -> "ColoredGraph":
        """Graph with vertex ``v`` renamed ``perm[v]``."""
        perm = np.asarray(perm)
        spins = np.empty(self.n, dtype=np.int8)
        weights = np.empty(self.n)
        spins[perm] = self.spins
        weights[perm] = self.weights
        return ColoredGraph(self.n, spins, weights, perm[self.edges])

    def __eq__(self, other) -> bool:
        if not isinstance(other, ColoredGraph):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.spins, other.spins)
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.edges, other.edges)
        )

    __hash__ = None


@dataclass(frozen=True)
class GenReport:
    m: int
    n_plus: int
    n_minus: int
    clipped_pairs: int
    strategy: str


def _spins(params: ModelParams, rng: np.random.Generator) -> np.ndarray:
    n = params.n
    if params.balance is Balance.EXACT_HALVES:
        spins = -np.ones(n, dtype=np.int8)
        spins[: (n + 1) // 2] = 1
        return spins
    return np.where(rng.random(n) < 0.5, 1, -1).astype(np.int8)


def _pairs_edges(params, spins, weights, rng):
    n = params.n
    rows, cols = [], []
    clipped = 0
    for i in range(n - 1):
        j = np.arange(i + 1, n)
        rate = np.where(spins[j] == spins[i], params.a, params.b)
        p = weights[i] * weights[j] * rate / n
        clipped += int(np.count_nonzero(p > 1))
        hit = j[rng.random(len(j)) < p]
        if len(hit):
            rows.append(np.full(len(hit), i))
            cols.append(hit)
    if not rows:
        return np.empty((0, 2), dtype=np.int64), clipped
    return np.column_stack([np.concatenate(rows), np.concatenate(cols)]), clipped


def _triangle_decode(idx: np.ndarray):
    # index k over pairs (i, j), 0 <= i < j, ordered by j then i
    j = np.floor((1 + np.sqrt(1 + 8 * idx.astype(np.float64))) / 2).astype(np.int64)
    j = np.where(j * (j - 1) // 2 > idx, j - 1, j)
    j = np.where((j + 1) * j // 2 <= idx, j + 1, j)
    i = idx - j * (j - 1) // 2
    return i, j


def _block_edges(params, spins, weights, rng):
    n = params.n
    keys = sorted(set(zip(spins.tolist(), weights.tolist())))
    groups = [np.flatnonzero((spins == s) & (weights == w)) for s, w in keys]
    parts = []
    clipped = 0
    for gi, (si, wi) in enumerate(keys):
        for gj in range(gi, len(keys)):
            sj, wj = keys[gj]
            a_idx, b_idx = groups[gi], groups[gj]
            p = wi * wj * (params.a if si == sj else params.b) / n
            if gi == gj:
                npairs = len(a_idx) * (len(a_idx) - 1) // 2
            else:
                npairs = len(a_idx) * len(b_idx)
            if npairs == 0:
                continue
            if p > 1:
                clipped += npairs
                p = 1.0
            count = rng.binomial(npairs, p)
            if count == 0:
                continue
            chosen = rng.choice(npairs, size=count, replace=False)
            if gi == gj:
                i, j = _triangle_decode(chosen)
                u, v = a_idx[i], a_idx[j]
            else:
                u, v = a_idx[chosen // len(b_idx)], b_idx[chosen % len(b_idx)]
            parts.append(np.column_stack([u, v]))
    if not parts:
        return np.empty((0, 2), dtype=np.int64), clipped
    return np.concatenate(parts), clipped


def sample_graph(
    params: ModelParams, strategy: str = "auto", pair_limit: int = PAIR_LIMIT
) -> tuple[ColoredGraph, GenReport]:
    """Draw one graph from the model, deterministically in ``params.seed``.

    Each pair is an edge independently with probability
    ``min(1, phi_u phi_v W / n)``; pairs whose raw probability exceeds one
    are counted in ``GenReport.clipped_pairs``.

    ``strategy`` is ``"pairs"`` (one Bernoulli draw per pair), ``"blocks"``
    (binomial edge counts per (spin, weight-atom) block, endpoints placed
    uniformly) or ``"auto"``, which picks pairs up to ``pair_limit`` vertices.
    """
    if strategy == "auto":
        strategy = "pairs" if params.n <= pair_limit else "blocks"
    if strategy == "pairs" and params.n > pair_limit:
        raise CapacityError(
            f"n={params.n} exceeds the pair-enumeration limit {pair_limit}; "
            "use the block strategy"
        )
    if strategy not in ("pairs", "blocks"):
        raise ValueError(f"unknown strategy {strategy!r}")
    rng = np.random.default_rng(params.seed)
    spins = _spins(params, rng)
    weights = params.law.sample(rng, params.n).astype(np.float64)
    if strategy == "pairs":
        edges, clipped = _pairs_edges(params, spins, weights, rng)
    else:
        edges, clipped = _block_edges(params, spins, weights, rng)
    g = ColoredGraph(params.n, spins, weights, edges)
    n_plus = int(np.count_nonzero(spins == 1))
    report = GenReport(g.m, n_plus, params.n - n_plus, clipped, strategy)
    return g, report


PathLike = Union[str, Path]


def format_graph(g: ColoredGraph) -> str:
    lines = [f"{g.n} {g.m}"]
    for v in range(g.n):
        spin = "+" if g.spins[v] > 0 else "-"
        lines.append(f"{v} {spin} {float(g.weights[v])!r}")
    for u, v in g.edges.tolist():
        lines.append(f"{u} {v}")
    return "\n".join(lines) + "\n"


def write_graph(g: ColoredGraph, path: PathLike) -> None:
    Path(path).write_text(format_graph(g), encoding="ascii", newline="\n")


def parse_graph(text: str) -> ColoredGraph:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise MalformedHeaderError(1, "empty file")
    head = lines[0].split()
    try:
        if len(head) != 2:
            raise ValueError
        n, m = int(head[0]), int(head[1])
        if n < 0 or m < 0:
            raise ValueError
    except ValueError:
        raise MalformedHeaderError(1, f"expected 'n m', got {lines[0]!r}") from None
    if len(lines) != 1 + n + m:
        raise MalformedHeaderError(
            1, f"header announces {n} vertices and {m} edges but file has {len(lines) - 1} body lines"
        )
    spins = np.empty(n, dtype=np.int8)
    weights = np.empty(n)
    for v in range(n):
        lineno = v + 2
        tok = lines[v + 1].split()
        if len(tok) != 3:
            raise MalformedLineError(lineno, f"expected 'id spin weight', got {lines[v + 1]!r}")
        if tok[0] != str(v):
            raise MalformedLineError(lineno, f"expected vertex id {v}, got {tok[0]!r}")
        if tok[1] not in ("+", "-"):
            raise BadSpinError(lineno, f"spin must be '+' or '-', got {tok[1]!r}")
        spins[v] = 1 if tok[1] == "+" else -1
        try:
            w = float(tok[2])
        except ValueError:
            raise BadWeightError(lineno, f"weight is not a number: {tok[2]!r}") from None
        if not (math.isfinite(w) and w > 0):
            raise BadWeightError(lineno, f"weight must be positive, got {tok[2]!r}")
        weights[v] = w
    edges = np.empty((m, 2), dtype=np.int64)
    seen: set[tuple[int, int]] = set()
    for k in range(m):
        lineno = n + k + 2
        tok = lines[n + k + 1].split()
        try:
            if len(tok) != 2:
                raise ValueError
            u, v = int(tok[0]), int(tok[1])
        except ValueError:
            raise MalformedLineError(lineno, f"expected 'u v', got {lines[n + k + 1]!r}") from None
        if not (0 <= u < n and 0 <= v < n) or u == v:
            raise MalformedLineError(lineno, f"invalid edge {u} {v}")
        key = (min(u, v), max(u, v))
        if key in seen:
            raise DuplicateEdgeError(lineno, f"duplicate edge {key[0]} {key[1]}")
        seen.add(key)
        edges[k] = key
    return ColoredGraph(n, spins, weights, edges)


def read_graph(path: PathLike) -> ColoredGraph:
    return parse_graph(Path(path).read_text(encoding="ascii"))
