from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.sparse.linalg import aslinearoperator

from ..errors import ZeroDataError

log = logging.getLogger(__name__)

STOP_DP = "DP"
STOP_MAX_ITERS = "max_iters"
STOP_STAGNATION = "stagnation"


@dataclass(frozen=True)
class LambdaRule:
    """How the regularization parameter is picked.

    ``fixed`` uses ``value``; ``optimal`` minimizes the error against a known
    true solution; ``sweep`` tries every entry of ``grid`` and keeps the best.
    """

    kind: str = "optimal"
    value: float | None = None
    grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("fixed", "optimal", "sweep"):
            raise ValueError(f"unknown lambda rule {self.kind!r}")
        if self.kind == "fixed" and (self.value is None or self.value < 0):
            raise ValueError("fixed lambda rule needs a value >= 0")
        if self.grid is not None:
            object.__setattr__(self, "grid", tuple(float(v) for v in self.grid))

    @classmethod
    def fixed(cls, value: float) -> "LambdaRule":
        return cls("fixed", value=float(value))

    @classmethod
    def optimal(cls) -> "LambdaRule":
        return cls("optimal")

    @classmethod
    def sweep(cls, grid: Sequence[float] | None = None) -> "LambdaRule":
        return cls("sweep", grid=None if grid is None else tuple(grid))


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 400
    relaxation_factor: float = 1.9
    dp_tau: float = 1.01
    dp_enabled: bool = True
    lambda_rule: LambdaRule = field(default_factory=LambdaRule)
    fista_L0: float | None = None
    fista_eta: float = 2.0
    seed: int = 0
    sigma1_iters: int = 100
    stagnation_tol: float = 1e-10
    lambda_log_range: tuple[float, float] = (-10.0, 2.0)
    lambda_evals: int = 60
    fista_sweep_size: int = 15

    def __post_init__(self):
        if not self.dp_tau > 1:
            raise ValueError("dp_tau must be > 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.relaxation_factor < 2:
            raise ValueError("relaxation_factor must lie in (0, 2)")
        if not self.fista_eta > 1:
            raise ValueError("fista_eta must be > 1")
        if self.fista_L0 is not None and not self.fista_L0 > 0:
            raise ValueError("fista_L0 must be > 0")


@dataclass(frozen=True)
class IterRecord:
    iter: int
    rre: float
    rrn: float
    objective: float
    lambda_used: float
    residual_norm: float


@dataclass
class ReconResult:
    method: str
    x_final: np.ndarray
    history: list[IterRecord]
    stop_reason: str
    dp_iter: Optional[int] = None
    min_rre_iter: Optional[int] = None
    x_dp: Optional[np.ndarray] = None
    x_best: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    @property
    def rre(self) -> np.ndarray:
        return np.array([h.rre for h in self.history])

    @property
    def rrn(self) -> np.ndarray:
        return np.array([h.rrn for h in self.history])

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([h.lambda_used for h in self.history])

    def record(self, k: int) -> IterRecord:
        return self.history[k - 1]

    @property
    def rre_dp(self) -> float:
        return float("nan") if self.dp_iter is None else self.history[self.dp_iter - 1].rre

    @property
    def rre_min(self) -> float:
        return float("nan") if self.min_rre_iter is None else self.history[self.min_rre_iter - 1].rre

    def history_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("iter,rre,rrn,objective,lambda\n")
            for h in self.history:
                fh.write(f"{h.iter},{h.rre!r},{h.rrn!r},{h.objective!r},{h.lambda_used!r}\n")


def as_operator(A):
    """Anything with ``matvec``/``rmatvec``/``shape`` passes through untouched."""
    if hasattr(A, "matvec") and hasattr(A, "rmatvec") and hasattr(A, "shape"):
        return A
    return aslinearoperator(A)


def metrics(x, x_true, A, b) -> tuple[float, float]:
    """Relative reconstruction error and relative residual norm of ``x``."""
    x_true = np.asarray(x_true, dtype=float)
    A = as_operator(A)
    nt = np.linalg.norm(x_true)
    if nt == 0:
        raise ZeroDataError("x_true has zero norm")
    bt = np.linalg.norm(A.matvec(x_true))
    if bt == 0:
        raise ZeroDataError("A x_true has zero norm")
    rre = np.linalg.norm(np.asarray(x) - x_true) / nt
    rrn = np.linalg.norm(A.matvec(np.asarray(x, dtype=float)) - b) / bt
    return float(rre), float(rrn)


def discrepancy_stop(residual_norm: float, delta: float, tau: float) -> bool:
    if not tau > 1:
        raise ValueError("tau must be > 1")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    return bool(residual_norm <= tau * delta)


class Tracker:
    """Per-iteration bookkeeping shared by all solvers."""

    def __init__(self, method, A, b, delta, x_true, opts: SolverOptions):
        self.method = method
        self.b = b
        self.delta = float(delta)
        self.opts = opts
        self.x_true = None if x_true is None else np.asarray(x_true, dtype=float)
        if self.x_true is not None:
            self.xt_norm = np.linalg.norm(self.x_true)
            if self.xt_norm == 0:
                raise ZeroDataError("x_true has zero norm")
            self.rrn_den = np.linalg.norm(A.matvec(self.x_true))
        else:
            self.xt_norm = None
            self.rrn_den = np.linalg.norm(b)
        if self.rrn_den == 0:
            raise ZeroDataError("cannot normalize residuals: zero reference data")
        self.history: list[IterRecord] = []
        self.dp_iter = None
        self.x_dp = None
        self.best = (np.inf, None, None)

    def rre_of(self, x) -> float:
        if self.x_true is None:
            return float("nan")
        return float(np.linalg.norm(x - self.x_true) / self.xt_norm)

    def update(self, x, residual_norm, objective, lam=float("nan"), rre=None) -> bool:
        """Record iterate ``x``; returns True when the DP says stop."""
        k = len(self.history) + 1
        if rre is None:
            rre = self.rre_of(x)
        self.history.append(
            IterRecord(k, rre, float(residual_norm / self.rrn_den), float(objective),
                       float(lam), float(residual_norm))
        )
        if rre < self.best[0]:
            self.best = (rre, k, x.copy())
        fired = self.delta > 0 and discrepancy_stop(residual_norm, self.delta, self.opts.dp_tau)
        if fired and self.dp_iter is None:
            self.dp_iter = k
            self.x_dp = x.copy()
        return fired and self.opts.dp_enabled

    def result(self, x, stop_reason, **extra) -> ReconResult:
        return ReconResult(
            method=self.method,
            x_final=x,
            history=self.history,
            stop_reason=stop_reason,
            dp_iter=self.dp_iter,
            min_rre_iter=self.best[1],
            x_dp=self.x_dp,
            x_best=self.best[2],
            extra=extra,
        )


def estimate_sigma1(A, iters: int = 100, seed: int = 0, tol: float = 1e-6) -> float:
    """Largest singular value of ``A`` by power iteration on ``A^T A``.

    The Rayleigh quotient approaches sigma_1^2 from below, so the result is
    a lower bound for sigma_1.
    """
    A = as_operator(A)
    n = A.shape[1]
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    prev = None
    rq = 0.0
    for _ in range(max(1, iters)):
        w = A.rmatvec(A.matvec(v))
        rq = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0:
            raise ZeroDataError("operator is zero on the power-iteration start vector")
        v = w / nw
        if prev is not None and abs(rq - prev) <= tol * abs(rq):
            break
        prev = rq
    return float(np.sqrt(rq))
