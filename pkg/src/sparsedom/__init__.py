"""Sparse domination of cube-indexed function families on dyadic grids."""
from __future__ import annotations

from .dyadic import (ContractingFamily, DyadicCube, OverlapDistribution, RootGeometry, SparseFamily,
                     Violation, overlap_distribution, validate_contracting, validate_eta_sparse)
from .engine import (DominationReport, build_sparse_bilinear, build_sparse_pointwise, cz_decompose,
                     toy_domination_check)
from .family import CubeFamily, check_ellr, check_majorization, sharp_maximal
from .gridfn import DiscreteMeasure, GridFunction, Weight, rearrangement

__version__ = "0.1.0"

__all__ = [
    "ContractingFamily", "CubeFamily", "DiscreteMeasure", "DominationReport", "DyadicCube",
    "GridFunction", "OverlapDistribution", "RootGeometry", "SparseFamily", "Violation", "Weight",
    "build_sparse_bilinear", "build_sparse_pointwise", "check_ellr", "check_majorization",
    "cz_decompose", "overlap_distribution", "rearrangement", "sharp_maximal", "toy_domination_check",
    "validate_contracting", "validate_eta_sparse",
]
