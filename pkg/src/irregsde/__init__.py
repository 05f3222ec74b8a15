"""Euler-type schemes for SDEs and SPDEs with irregular coefficients, and a
Monte Carlo harness that measures their convergence rates."""
from .core import (
    BVFunction,
    CflViolation,
    Coefficient1D,
    DivergedFieldError,
    DivergedPathError,
    DomainError,
    EmpiricalCDF,
    FactorizationError,
    RngStream,
    RunFailure,
    TimeGrid,
    constant,
    from_x,
)
from .avikainen import avikainen_check
from .fbm import FbmConfig, fbm_em_path, fbm_sample
from .harness import (
    ErrorCurve,
    MlmcReport,
    RateFit,
    SchemeFamily,
    fit_rate,
    mlmc_estimate,
    strong_error,
    weak_error,
)
from .schemes_bm import EMConfig, SignedAtomMeasure, em_path, singular_sde_scheme
from .she import LatticeField, SheConfig, she_simulate
from .stable import StableConfig, sample_stable_increment, stable_em_path

__version__ = "0.1.0"
