"""Sparse operators, weight constants and Orlicz averages on dyadic grids."""
from .bounds import BoundInputs, DoubleSumParams, double_sum, theorem_bound
from .grid import CellSet, CubeFamily, DyadicCube, GridFunction, GridSpec
from .orlicz import ExpLr, LLogL, Power, luxemburg_norm, parse_young
from .sparse import SparseFamily, cz_stopping_family, sparse_operator
from .weights import a1_constant, ainf_fujii, ap_relative, dyadic_maximal

__all__ = [
    "BoundInputs", "CellSet", "CubeFamily", "DoubleSumParams", "DyadicCube", "ExpLr", "GridFunction",
    "GridSpec", "LLogL", "Power", "SparseFamily", "a1_constant", "ainf_fujii", "ap_relative",
    "cz_stopping_family", "double_sum", "dyadic_maximal", "luxemburg_norm", "parse_young",
    "sparse_operator", "theorem_bound",
]
__version__ = "0.1.0"
