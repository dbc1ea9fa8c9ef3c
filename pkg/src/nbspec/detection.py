"""Blind two-community recovery from the second non-backtracking eigenvector."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .generator import ColoredGraph
from .nb_operator import NbOperator, build
from .spectral import SpectrumReport, top_two_iterative


class TauMode(str, enum.Enum):
    FIXED = "fixed"
    MEDIAN = "median"


class Relabel(str, enum.Enum):
    IDENTITY = "identity"
    SWAP = "swap"


@dataclass(frozen=True, eq=False)
class Assignment:
    """Labels in {+1, -1}: ``+`` iff ``score > tau / sqrt(n)``.

    ``flagged`` marks assignments built from an eigenvector the solver did
    not converge on.
    """

    labels: np.ndarray
    tau: float
    scores: np.ndarray
    flagged: bool = False
    report: Optional[SpectrumReport] = None

    @property
    def n(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class OverlapScore:
    value: float
    permutation: Relabel


@dataclass(frozen=True)
class DetectConfig:
    tau: float = 0.0
    tau_mode: TauMode = TauMode.FIXED
    max_iters: int = 5000
    tol: float = 1e-10
    seed: int = 0


def vertex_scores(op: NbOperator, xi2) -> np.ndarray:
    """score(v) = sum of xi2(e) over oriented edges e with head v.

    A complex eigenvector is scored through its real part.
    """
    xi2 = np.asarray(xi2)
    if xi2.shape != (op.dim,):
        raise ValueError(f"edge vector has shape {xi2.shape}, expected ({op.dim},)")
    return np.bincount(op.head, weights=np.real(xi2), minlength=op.n_vertices)


def assign(scores, tau: float, n: Optional[int] = None) -> Assignment:
    scores = np.asarray(scores, dtype=float)
    n = len(scores) if n is None else n
    cut = tau / math.sqrt(n) if math.isfinite(tau) else tau
    labels = np.where(scores > cut, 1, -1).astype(np.int8)
    return Assignment(labels, float(tau), scores)


def overlap(est, truth) -> OverlapScore:
    """Best agreement fraction over the identity and the global spin swap."""
    est = np.asarray(est)
    truth = np.asarray(truth)
    if est.shape != truth.shape:
        raise ValueError(f"label vectors differ in length: {len(est)} vs {len(truth)}")
    n = len(est)
    if n == 0:
        raise ValueError("overlap of empty label vectors is undefined")
    same = int(np.count_nonzero(est == truth))
    # the swap agreement is (n - same) / n, so the two fractions sum to 1
    if same >= n - same:
        return OverlapScore(same / n, Relabel.IDENTITY)
    return OverlapScore((n - same) / n, Relabel.SWAP)


def detect(g: ColoredGraph, config: DetectConfig = DetectConfig(),
           op: Optional[NbOperator] = None) -> Assignment:
    """Run the solver, score vertices and threshold; ``g.spins`` is never read."""
    op = build(g) if op is None else op
    report = top_two_iterative(op, max_iters=config.max_iters, tol=config.tol, seed=config.seed)
    scores = vertex_scores(op, report.xi2)
    tau = config.tau
    if TauMode(config.tau_mode) is TauMode.MEDIAN:
        tau = float(np.median(scores)) * math.sqrt(g.n)
    a = assign(scores, tau, g.n)
    return Assignment(a.labels, a.tau, a.scores, not report.converged, report)
