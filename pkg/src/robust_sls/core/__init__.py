from .counts import StructureCounts, structure_counts
from .fir import FirResponse
from .norms import column_l1_budget, e1_norm_bound, hinf_bound, hinf_grid_estimate, row_nnz_max
from .patterns import (ShapeError, SparsityPattern, pattern_compose, pattern_power,
                       pattern_union)

__all__ = [
    "FirResponse", "ShapeError", "SparsityPattern", "StructureCounts",
    "column_l1_budget", "e1_norm_bound", "hinf_bound", "hinf_grid_estimate",
    "pattern_compose", "pattern_power", "pattern_union", "row_nnz_max",
    "structure_counts",
]
