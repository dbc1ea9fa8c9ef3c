import math

import numpy as np
import pytest

from nbspec.detection import (DetectConfig, Relabel, TauMode, assign, detect, overlap,
                              vertex_scores)
from nbspec.generator import sample_graph
from nbspec.model import ModelParams, WeightLaw
from nbspec.nb_operator import build
from nbspec.spectral import edge_chi
from conftest import make_graph


def test_scores_all_ones_triangle(triangle):
    op = build(triangle)
    assert np.array_equal(vertex_scores(op, np.ones(op.dim)), [2, 2, 2])


def test_scores_isolated_vertex():
    g = make_graph(4, [(0, 1), (1, 2), (0, 2)])
    op = build(g)
    assert vertex_scores(op, np.ones(op.dim))[3] == 0


def test_scores_of_chi2_are_neighbour_spin_sums():
    g, _ = sample_graph(ModelParams(200, 6, 2, seed=5))
    op = build(g)
    s = vertex_scores(op, edge_chi(g, op, 2))
    ref = np.zeros(g.n)
    for u, v in g.edges:
        ref[u] += g.spins[u]
        ref[v] += g.spins[v]
    # chi_2 reads the head spin, so each vertex sums its own spin over its in-edges
    assert np.allclose(s, ref / math.sqrt(2))


def test_scores_wrong_length(triangle):
    with pytest.raises(ValueError):
        vertex_scores(build(triangle), np.ones(5))


def test_assign_examples():
    assert np.all(assign([1.0, 2.0, 0.5], 0).labels == 1)
    a = assign([1.0, -1.0, 2.0, -2.0], 0)
    assert list(a.labels) == [1, -1, 1, -1]
    assert np.all(assign([1e300, 5.0], math.inf).labels == -1)
    # threshold is tau / sqrt(n)
    assert list(assign([0.4, 0.6], 0.5 * math.sqrt(2)).labels) == [-1, 1]


def test_assign_tau_monotone():
    rng = np.random.default_rng(0)
    s = rng.standard_normal(500)
    counts = [int((assign(s, t).labels == 1).sum()) for t in np.linspace(-50, 50, 101)]
    assert all(x >= y for x, y in zip(counts, counts[1:]))


def test_overlap_examples():
    t = np.array([1, -1, 1, 1, -1])
    assert overlap(t, t) == overlap(t, t) and overlap(t, t).value == 1.0
    assert overlap(t, t).permutation is Relabel.IDENTITY
    flip = overlap(-t, t)
    assert flip.value == 1.0 and flip.permutation is Relabel.SWAP
    with pytest.raises(ValueError):
        overlap(t, t[:3])
    with pytest.raises(ValueError):
        overlap([], [])


def test_overlap_fair_coins():
    rng = np.random.default_rng(11)
    truth = rng.choice([-1, 1], 10000)
    for _ in range(20):
        v = overlap(rng.choice([-1, 1], 10000), truth).value
        assert 0.5 <= v <= 0.52


def test_overlap_halves_sum_to_one():
    rng = np.random.default_rng(3)
    for n in (1, 2, 7, 100):
        est, truth = rng.choice([-1, 1], n), rng.choice([-1, 1], n)
        same = np.mean(est == truth)
        assert same + (1 - same) == 1
        assert overlap(est, truth).value == max(same, 1 - same)


@pytest.fixture(scope="module")
def above():
    g, _ = sample_graph(ModelParams(2000, 8, 2, seed=3))
    return g, detect(g)


def test_detect_above_threshold(above):
    g, res = above
    assert not res.flagged
    assert overlap(res.labels, g.spins).value >= 0.7


def test_detect_ignores_spins(above):
    g, res = above
    blind = detect(g.with_spins(np.ones(g.n, dtype=np.int8)))
    assert np.array_equal(blind.labels, res.labels)


def test_sign_invariance(above):
    g, res = above
    op = build(g)
    plus = assign(vertex_scores(op, res.report.xi2), 0)
    minus = assign(vertex_scores(op, -res.report.xi2), 0)
    nonzero = plus.scores != 0
    assert np.array_equal(minus.labels[nonzero], -plus.labels[nonzero])
    # zero scores (isolated vertices) are labelled - under either sign
    gap = abs(overlap(plus.labels, g.spins).value - overlap(minus.labels, g.spins).value)
    assert gap <= np.count_nonzero(~nonzero) / g.n + 1e-12


def test_permutation_equivariance(above):
    g, res = above
    perm = np.random.default_rng(9).permutation(g.n)
    h = g.relabeled(perm)
    other = detect(h)
    base = overlap(res.labels, g.spins).value
    assert overlap(other.labels, h.spins).value == pytest.approx(base, abs=0.005)


def test_detect_below_threshold():
    g, _ = sample_graph(ModelParams(2000, 3.5, 2.5, seed=1))
    assert overlap(detect(g).labels, g.spins).value <= 0.55


def test_detect_weighted_without_weight_input():
    law = WeightLaw((0.5, 1.5), (0.5, 0.5))
    g, _ = sample_graph(ModelParams(2000, 8, 2, law, seed=2))
    res = detect(g.__class__(g.n, g.spins, np.ones(g.n), g.edges))
    assert overlap(res.labels, g.spins).value >= 0.7
    assert np.array_equal(res.labels, detect(g).labels)


def test_median_tau_balances_labels(above):
    g, _ = above
    res = detect(g, DetectConfig(tau_mode=TauMode.MEDIAN))
    assert abs(int((res.labels == 1).sum()) - g.n / 2) <= 1
    assert res.tau == pytest.approx(np.median(res.scores) * math.sqrt(g.n))


def test_nonconvergence_is_flagged(above):
    g, _ = above
    res = detect(g, DetectConfig(max_iters=2))
    assert res.flagged and len(res.labels) == g.n
