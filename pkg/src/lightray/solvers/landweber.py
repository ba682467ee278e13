from __future__ import annotations

import numpy as np

from .common import (
    STOP_DP,
    STOP_MAX_ITERS,
    STOP_STAGNATION,
    ReconResult,
    SolverOptions,
    Tracker,
    as_operator,
    estimate_sigma1,
)


def landweber(A, obs, x_true=None, opts: SolverOptions | None = None,
              sigma1: float | None = None) -> ReconResult:
    """Landweber iteration ``x <- x + omega A^T (b - A x)`` from ``x = 0``.

    ``omega = relaxation_factor / sigma1**2``.  Pass ``sigma1`` to skip the
    power-iteration estimate.
    """
    opts = opts or SolverOptions()
    A = as_operator(A)
    b = np.asarray(obs.b, dtype=float)
    if sigma1 is None:
        sigma1 = estimate_sigma1(A, opts.sigma1_iters, opts.seed)
    omega = opts.relaxation_factor / sigma1 ** 2
    tr = Tracker("landweber", A, b, obs.delta, x_true, opts)

    x = np.zeros(A.shape[1])
    r = b.copy()
    reason = STOP_MAX_ITERS
    for _ in range(opts.max_iters):
        step = omega * A.rmatvec(r)
        x = x + step
        r = b - A.matvec(x)
        rn = np.linalg.norm(r)
        if tr.update(x, rn, rn * rn):
            reason = STOP_DP
            break
        if np.linalg.norm(step) <= opts.stagnation_tol * np.linalg.norm(x):
            reason = STOP_STAGNATION
            break
    return tr.result(x, reason, omega=omega, sigma1=sigma1)
