"""Poisson linearization of dual Poisson-Lie groups for coboundary Lie bialgebras.

Submodules: :mod:`plgl.lie_core` (bialgebras and Manin triples),
:mod:`plgl.matrix_groups` (matrix groups of the double), :mod:`plgl.fields`
(tensor fields on charts), :mod:`plgl.linearization` (Exp, sigma and the Moser
flow), :mod:`plgl.theorems` (numerical verdicts) and :mod:`plgl.cli`.
"""
from .lie_core import AlgebraError, LieAlgebra, LieBialgebra, ManinTriple, cobracket_from_r
from .linearization import ModifiedExp, Numerics, Pipeline, build_pipeline, moser_linearize
from .matrix_groups import DomainError, ManinGroup
from .registry import builtin_names, resolve
from .theorems import ExperimentReport

__version__ = "0.1.0"

__all__ = ["AlgebraError", "DomainError", "ExperimentReport", "LieAlgebra", "LieBialgebra",
           "ManinGroup", "ManinTriple", "ModifiedExp", "Numerics", "Pipeline", "build_pipeline",
           "builtin_names", "cobracket_from_r", "moser_linearize", "resolve"]
