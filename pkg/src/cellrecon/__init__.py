"""Piecewise-smooth reconstruction of bivariate functions from cell averages."""

__version__ = "0.1.0"

from .grid import (AggregateGrid, CellGrid, ExtendedGrid, TestFunction,
                   aggregate, catalog, difference, discretize)
from .signature import CellPartition, SignatureField, compute_signature, \
    detect, estimate_delta
from .spline import TensorSpline, central_factorial, quasi_coeffs, \
    quasi_interpolant, zero_level_curve
from .edge import QuadraticArc, chain_arcs
from .curve import ImplicitCurve, curve_distance, enhanced_curve, \
    first_stage_curve
from .reconstruct import PiecewiseReconstruction, build_reconstruction, \
    evaluate, graph_hausdorff

__all__ = [
    "AggregateGrid", "CellGrid", "CellPartition", "ExtendedGrid",
    "ImplicitCurve", "PiecewiseReconstruction", "QuadraticArc",
    "SignatureField", "TensorSpline", "TestFunction", "aggregate",
    "build_reconstruction", "catalog", "central_factorial", "chain_arcs",
    "compute_signature", "curve_distance", "detect", "difference",
    "discretize", "enhanced_curve", "estimate_delta", "evaluate",
    "first_stage_curve", "graph_hausdorff", "quasi_coeffs",
    "quasi_interpolant", "zero_level_curve",
]
