"""Non-backtracking spectra of degree-corrected block models.

Graph sampling, the non-backtracking operator and its leading eigenpairs,
blind two-community detection, the matching two-type branching process and
graph-side local diagnostics.
"""

from .model import Balance, ModelParams, TheoryScalars, WeightLaw, parse_weight_law, theory
from .generator import ColoredGraph, read_graph, sample_graph, write_graph
from .nb_operator import NbOperator, build
from .spectral import SpectrumReport, dense_spectrum, top_two_iterative
from .detection import Assignment, detect, overlap

__all__ = [
    "Assignment", "Balance", "ColoredGraph", "ModelParams", "NbOperator", "SpectrumReport",
    "TheoryScalars", "WeightLaw", "build", "dense_spectrum", "detect", "overlap",
    "parse_weight_law", "read_graph", "sample_graph", "theory", "top_two_iterative",
    "write_graph",
]
__version__ = "0.1.0"
