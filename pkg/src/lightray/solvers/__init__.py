"""Iterative regularization for ``A x = b``: Landweber, FISTA, hybrid Tikhonov."""
from .common import (
    IterRecord,
    LambdaRule,
    ReconResult,
    SolverOptions,
    discrepancy_stop,
    estimate_sigma1,
    metrics,
)
from .fista import default_fista_lambdas, fista, fista_select, shrink
from .krylov import GKState, gen_tikhonov, golden_section, golub_kahan_step, hybrid_tikhonov
from .landweber import landweber

__all__ = [
    "IterRecord",
    "LambdaRule",
    "ReconResult",
    "SolverOptions",
    "discrepancy_stop",
    "estimate_sigma1",
    "metrics",
    "shrink",
    "fista",
    "fista_select",
    "default_fista_lambdas",
    "GKState",
    "golub_kahan_step",
    "golden_section",
    "hybrid_tikhonov",
    "gen_tikhonov",
    "landweber",
]
