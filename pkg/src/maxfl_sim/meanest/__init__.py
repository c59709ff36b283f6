"""Two- and three-client Gaussian mean estimation."""

from .analysis import (
    CANONICAL_THREE_CLIENT,
    MEANEST_CSV_COLUMNS,
    Estimator,
    StationaryPoint,
    Surrogate,
    ThreeClientReport,
    appeal_sweep,
    canonical_three_client_cases,
    expected_appeal,
    fedavg_appeal_bound,
    find_local_minima,
    grad_v,
    hessian_sign_boundary,
    hessian_v,
    local_minima,
    maxfl_appeal_bound,
    midpoint_is_maximum,
    objective_v,
    three_client_cases,
    write_meanest_csv,
)
from .kernels import BACKEND

__all__ = [
    "BACKEND",
    "CANONICAL_THREE_CLIENT",
    "MEANEST_CSV_COLUMNS",
    "Estimator",
    "StationaryPoint",
    "Surrogate",
    "ThreeClientReport",
    "appeal_sweep",
    "canonical_three_client_cases",
    "expected_appeal",
    "fedavg_appeal_bound",
    "find_local_minima",
    "grad_v",
    "hessian_sign_boundary",
    "hessian_v",
    "local_minima",
    "maxfl_appeal_bound",
    "midpoint_is_maximum",
    "objective_v",
    "three_client_cases",
    "write_meanest_csv",
]
