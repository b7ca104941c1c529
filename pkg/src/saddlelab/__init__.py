"""Worst-case quadratic saddle-point instances and iteration-complexity lower bounds."""

from .instances import (
    BilinearInstance,
    DimensionError,
    PureInstance,
    QuadraticSaddle,
    RotatedInstance,
    ScaledInstance,
    build_scaled_cc_instance,
)
from .params import (
    BilinearParams,
    GeneralParams,
    ParamError,
    RateCertificate,
    lower_iter_count,
    prox_rate_q,
    pure_rate_q,
)
from .solvers import SolverConfig, run_solver

__all__ = [
    "BilinearInstance",
    "BilinearParams",
    "DimensionError",
    "GeneralParams",
    "ParamError",
    "PureInstance",
    "QuadraticSaddle",
    "RateCertificate",
    "RotatedInstance",
    "ScaledInstance",
    "SolverConfig",
    "build_scaled_cc_instance",
    "lower_iter_count",
    "prox_rate_q",
    "pure_rate_q",
    "run_solver",
]
__version__ = "0.1.0"
