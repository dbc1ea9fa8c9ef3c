"""Non-backtracking operator on oriented edges.

Undirected edge ``i = {u, v}`` (with ``u < v``) yields oriented edges
``2i = (u -> v)`` and ``2i + 1 = (v -> u)``, so reversal is ``e ^ 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TextIO

import numpy as np
import scipy.sparse as sp

from .generator import CapacityError, ColoredGraph

DENSE_LIMIT = 6000


@dataclass(frozen=True, eq=False)
class OrientedEdgeIndex:
    tail: np.ndarray
    head: np.ndarray
    out_ptr: np.ndarray
    out_edges: np.ndarray

    @property
    def count(self) -> int:
        return len(self.tail)

    @staticmethod
    def reverse(e):
        return np.bitwise_xor(e, 1)

    def out_of(self, v: int) -> np.ndarray:
        return self.out_edges[self.out_ptr[v] : self.out_ptr[v + 1]]


@dataclass(frozen=True, eq=False)
class NbOperator:
    """Sparse B with successor lists stored as CSR rows.

    ``succ_ptr``/``succ`` list, for each oriented edge e, the edges f with
    ``head(e) == tail(f)`` and ``head(f) != tail(e)``.
    """

    index: OrientedEdgeIndex
    succ_ptr: np.ndarray
    succ: np.ndarray
    n_vertices: int

    @property
    def dim(self) -> int:
        return self.index.count

    @property
    def tail(self) -> np.ndarray:
        return self.index.tail

    @property
    def head(self) -> np.ndarray:
        return self.index.head

    def successors(self, e: int) -> np.ndarray:
        return self.succ[self.succ_ptr[e] : self.succ_ptr[e + 1]]

    @property
    def matrix(self) -> sp.csr_matrix:
        mat = getattr(self, "_matrix", None)
        if mat is None:
            data = np.ones(len(self.succ))
            mat = sp.csr_matrix((data, self.succ, self.succ_ptr), shape=(self.dim, self.dim))
            object.__setattr__(self, "_matrix", mat)
        return mat

    @property
    def matrix_t(self) -> sp.csr_matrix:
        mat = getattr(self, "_matrix_t", None)
        if mat is None:
            mat = self.matrix.T.tocsr()
            object.__setattr__(self, "_matrix_t", mat)
        return mat


def _ranges(starts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Concatenation of ``arange(s, s + l)`` for each pair."""
    total = int(lengths.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    offsets = np.repeat(np.cumsum(lengths) - lengths, lengths)
    return np.repeat(starts, lengths) + np.arange(total) - offsets


def build(g: ColoredGraph) -> NbOperator:
    m = g.m
    tail = np.empty(2 * m, dtype=np.int64)
    head = np.empty(2 * m, dtype=np.int64)
    tail[0::2], head[0::2] = g.edges[:, 0], g.edges[:, 1]
    tail[1::2], head[1::2] = g.edges[:, 1], g.edges[:, 0]
    out_edges = np.argsort(tail, kind="stable").astype(np.int64)
    deg = np.bincount(tail, minlength=g.n)
    out_ptr = np.zeros(g.n + 1, dtype=np.int64)
    np.cumsum(deg, out=out_ptr[1:])
    index = OrientedEdgeIndex(tail, head, out_ptr, out_edges)

    e_ids = np.arange(2 * m, dtype=np.int64)
    lengths = deg[head]
    cand = out_edges[_ranges(out_ptr[head], lengths)]
    owner = np.repeat(e_ids, lengths)
    keep = cand != (owner ^ 1)
    succ = cand[keep]
    succ_ptr = np.zeros(2 * m + 1, dtype=np.int64)
    np.cumsum(lengths - 1, out=succ_ptr[1:])
    return NbOperator(index, succ_ptr, succ, g.n)


def _check_dim(op: NbOperator, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[0] != op.dim:
        raise ValueError(f"vector has length {x.shape[0]}, operator dimension is {op.dim}")
    return x


def matvec(op: NbOperator, x) -> np.ndarray:
    """(Bx)_e = sum of x_f over successors f of e. Accepts (2m,) or (2m, k)."""
    x = _check_dim(op, x)
    if op.dim == 0:
        return np.zeros_like(x, dtype=np.result_type(x, float))
    return op.matrix @ x


def matvec_adjoint(op: NbOperator, x) -> np.ndarray:
    x = _check_dim(op, x)
    if op.dim == 0:
        return np.zeros_like(x, dtype=np.result_type(x, float))
    return op.matrix_t @ x


def swap(op: NbOperator, x) -> np.ndarray:
    """(Px)_e = x_{reverse(e)}."""
    x = _check_dim(op, x)
    return x[np.arange(op.dim) ^ 1]


def dense_matrix(op: NbOperator, limit: int = DENSE_LIMIT) -> np.ndarray:
    if op.dim > limit:
        raise CapacityError(f"2m={op.dim} exceeds the dense limit {limit}")
    return op.matrix.toarray()


def swap_matrix(dim: int) -> np.ndarray:
    P = np.zeros((dim, dim))
    P[np.arange(dim), np.arange(dim) ^ 1] = 1.0
    return P


def export_dense(op: NbOperator, stream: TextIO, limit: int = DENSE_LIMIT) -> None:
    for row in dense_matrix(op, limit).astype(int):
        stream.write(" ".join(map(str, row)) + "\n")
