from .bv import BVFunction, Jump, bv_eval, bv_total_variation
from .coefficients import Coefficient1D, constant, from_x
from .ecdf import EmpiricalCDF, ecdf_eval
from .errors import (
    CflViolation,
    DivergedFieldError,
    DivergedPathError,
    DomainError,
    FactorizationError,
    RunFailure,
)
from .grid import TimeGrid, eta, is_refinement, step_index
from .mollifier import Mollifier, build_mollifier
from .paths import PathEnsemble, coarsen_increments, first_nonfinite
from .parallel import default_threads, run_blocks, tree_reduce
from .rng import RngStream

__all__ = [
    "BVFunction",
    "Jump",
    "bv_eval",
    "bv_total_variation",
    "Coefficient1D",
    "constant",
    "from_x",
    "EmpiricalCDF",
    "ecdf_eval",
    "CflViolation",
    "DivergedFieldError",
    "DivergedPathError",
    "DomainError",
    "FactorizationError",
    "RunFailure",
    "TimeGrid",
    "eta",
    "is_refinement",
    "step_index",
    "Mollifier",
    "build_mollifier",
    "PathEnsemble",
    "coarsen_increments",
    "first_nonfinite",
    "default_threads",
    "run_blocks",
    "tree_reduce",
    "RngStream",
]
