"""Primal state spaces: rate families, stationary measures, graphs, assumption checks."""

from .assumptions import FAILS, HOLDS, INCONCLUSIVE, AssumptionReport, Verdict, check_assumptions
from .config import ModelConfig, load_model, parse_model
from .graph import (Branch, BranchVertex, GraphMeasure, GraphModel, GraphSpec, HeadTailRates,
                    Ray, ShiftedRates, compute_center, detailed_balance_residual, half_line,
                    line_as_graph, mirrored_rates, mu_graph, star_graph)
from .measure import LineMeasure, Measure, mu_bd
from .rates import (F1, F2, BDRates, CustomRates, ExponentialRates, GeometricRates,
                    TableRates, mirrored)

__all__ = [
    "AssumptionReport", "BDRates", "Branch", "BranchVertex", "CustomRates",
    "ExponentialRates", "F1", "F2", "FAILS", "GeometricRates", "GraphMeasure",
    "GraphModel", "GraphSpec", "HOLDS", "HeadTailRates", "INCONCLUSIVE", "LineMeasure",
    "Measure", "ModelConfig", "Ray", "ShiftedRates", "TableRates", "Verdict", "check_assumptions",
    "compute_center", "detailed_balance_residual", "half_line", "line_as_graph", "load_model",
    "mirrored", "mirrored_rates", "mu_bd", "mu_graph", "parse_model", "star_graph",
]
