from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nbspec.generator import ColoredGraph  # noqa: E402


def make_graph(n, edges, spins=None, weights=None) -> ColoredGraph:
    spins = np.ones(n, dtype=int) if spins is None else spins
    weights = np.ones(n) if weights is None else weights
    return ColoredGraph(n, spins, weights, np.array(edges, dtype=np.int64).reshape(-1, 2))


@pytest.fixture
def triangle():
    return make_graph(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def path3():
    return make_graph(3, [(0, 1), (1, 2)])


@pytest.fixture
def star3():
    return make_graph(4, [(0, 1), (0, 2), (0, 3)])


@pytest.fixture
def k4():
    return make_graph(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])


@pytest.fixture
def two_triangles():
    return make_graph(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)])


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
