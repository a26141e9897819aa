"""Single signature coefficients of piecewise-linear paths.

Exact computation through Chen's relation, approximation by filtered
signature kernels solved as Goursat PDEs, and sparse CDE Euler schemes
driven by the resulting coefficients.
"""

__version__ = "0.1.0"

from .budget import BudgetExceeded
from .cde import (CdeGraph, EulerState, build_graph, euler_step, flow, generational_model, lattice_cde,
                  sparsity, walks)
from .extraction import (ExtractionPlan, anagram_class, batch_retrieve, coefficient, error_bound, extract,
                         semiordered, vandermonde_weights)
from .oracle import anagram_sum_oracle, coefficient_chen, truncated_kernel, truncated_signature
from .paths import BlockPartition, PathError, PiecewiseLinearPath, axis_path, generate_path, read_csv
from .pde import DyadicGrid, solve_goursat_axis, solve_goursat_general

__all__ = [
    "BlockPartition", "BudgetExceeded", "CdeGraph", "DyadicGrid", "EulerState", "ExtractionPlan",
    "PathError", "PiecewiseLinearPath", "anagram_class", "anagram_sum_oracle", "axis_path",
    "batch_retrieve", "build_graph", "coefficient", "coefficient_chen", "error_bound", "euler_step",
    "extract", "flow", "generate_path", "generational_model", "lattice_cde", "read_csv", "semiordered",
    "solve_goursat_axis", "solve_goursat_general", "sparsity", "truncated_kernel", "truncated_signature",
    "vandermonde_weights", "walks",
]
