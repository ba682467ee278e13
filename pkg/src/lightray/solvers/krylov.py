"""Hybrid projection methods built on Golub-Kahan bidiagonalization.

Both solvers share one recurrence.  With a prior covariance ``Q`` the
right vectors are orthonormal in the ``Q`` inner product and the iterate
is ``x = Q V_k z``; without it ``Q`` is the identity and ``x = V_k z``.
In both cases ``z`` solves the small problem
``min ||B_k z - beta_1 e_1||^2 + lam ||z||^2``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..errors import KrylovBreakdown, NumericalError
from .common import (
    STOP_DP,
    STOP_MAX_ITERS,
    STOP_STAGNATION,
    LambdaRule,
    ReconResult,
    SolverOptions,
    Tracker,
    as_operator,
)

log = logging.getLogger(__name__)

BREAKDOWN_TOL = 1e-14
_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class GKState:
    """Bidiagonalization after ``k`` steps: ``A Q V_k = U_{k+1} B_k``.

    ``U`` and ``V`` store basis vectors as rows.  ``QV`` is ``None`` when
    no covariance is used.
    """

    U: np.ndarray
    V: np.ndarray
    QV: np.ndarray | None
    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    k: int = 0
    exhausted: bool = False

    @property
    def Uk1(self) -> np.ndarray:
        return self.U[: self.k + 1].T

    @property
    def Vk(self) -> np.ndarray:
        return self.V[: self.k].T

    @property
    def B(self) -> np.ndarray:
        k = self.k
        B = np.zeros((k + 1, k))
        B[np.arange(k), np.arange(k)] = self.alphas[:k]
        B[np.arange(1, k + 1), np.arange(k)] = self.betas[1: k + 1]
        return B

    @property
    def beta1(self) -> float:
        return self.betas[0]


def _new_state(m, n, capacity, with_q) -> GKState:
    return GKState(
        U=np.zeros((capacity + 1, m)),
        V=np.zeros((capacity, n)),
        QV=np.zeros((capacity, n)) if with_q else None,
    )


def _apply_q(Q, v):
    if Q is None:
        return v
    out = Q.matvec(v) if hasattr(Q, "matvec") else Q @ v
    out = np.asarray(out, dtype=float)
    if not np.all(np.isfinite(out)):
        raise NumericalError("covariance application returned non-finite values")
    return out


def golub_kahan_step(A, b, state: GKState | None = None, Q=None, capacity: int = 400) -> GKState:
    """Advance the (generalized) Golub-Kahan recurrence by one step.

    Vectors are reorthogonalized against the whole basis by classical
    Gram-Schmidt, with a second pass whenever the first removes more than
    ``1 - 1/sqrt(2)`` of the norm.  Raises :class:`KrylovBreakdown` when the new
    right vector vanishes, i.e. the Krylov space is exhausted.  A vanishing
    left vector is the benign case: ``B_k`` is complete and further steps
    are refused via ``state.exhausted``.
    """
    A = as_operator(A)
    m, n = A.shape
    if state is None:
        state = _new_state(m, n, capacity, Q is not None)
        b = np.asarray(b, dtype=float)
        beta = np.linalg.norm(b)
        if beta < BREAKDOWN_TOL:
            raise KrylovBreakdown(0, beta)
        state.U[0] = b / beta
        state.betas.append(beta)
    if state.exhausted:
        raise KrylovBreakdown(state.k + 1, 0.0)
    k = state.k
    if k >= state.V.shape[0]:
        _grow(state)
    QV = state.V if state.QV is None else state.QV

    w = A.rmatvec(state.U[k])
    if k > 0:
        w = w - state.betas[k] * state.V[k - 1]
    Qw = _apply_q(Q, w)
    raw = np.sqrt(max(w @ Qw, 0.0))
    alpha = raw
    for _ in range(2):
        if k == 0:
            break
        before = alpha
        c = QV[:k] @ w
        w = w - c @ state.V[:k]
        Qw = Qw - c @ QV[:k] if Q is not None else w
        alpha = np.sqrt(max(w @ Qw, 0.0))
        if alpha > before / np.sqrt(2.0):
            break
    if alpha < BREAKDOWN_TOL or alpha < 1e-12 * raw:
        raise KrylovBreakdown(k + 1, alpha)
    state.V[k] = w / alpha
    if state.QV is not None:
        state.QV[k] = Qw / alpha
    state.alphas.append(alpha)

    p = A.matvec(QV[k]) - alpha * state.U[k]
    raw = np.linalg.norm(p)
    beta = raw
    for _ in range(2):
        before = beta
        c = state.U[: k + 1] @ p
        p = p - c @ state.U[: k + 1]
        beta = np.linalg.norm(p)
        if beta > before / np.sqrt(2.0):
            break
    state.k = k + 1
    if beta < BREAKDOWN_TOL or beta < 1e-12 * raw:
        state.betas.append(0.0)
        state.exhausted = True
    else:
        state.U[k + 1] = p / beta
        state.betas.append(beta)
    return state


def _grow(state: GKState) -> None:
    cap = state.V.shape[0]
    state.U = np.vstack([state.U, np.zeros((cap, state.U.shape[1]))])
    state.V = np.vstack([state.V, np.zeros((cap, state.V.shape[1]))])
    if state.QV is not None:
        state.QV = np.vstack([state.QV, np.zeros((cap, state.QV.shape[1]))])


class ProjectedTikhonov:
    """Solutions of ``min ||B z - beta1 e1||^2 + lam ||z||^2`` for many ``lam``.

    With numba each solve is an O(k) Givens sweep on the bidiagonal;
    otherwise one SVD is taken up front and reused through filter factors.
    """

    def __init__(self, B: np.ndarray, beta1: float, alphas=None, betas=None):
        self.beta1 = float(beta1)
        k = B.shape[1]
        self.fast = kernels.USE_NUMBA and k > 0
        if self.fast:
            self.alphas = np.ascontiguousarray(np.diag(B) if alphas is None else alphas, dtype=float)
            self.betas = np.ascontiguousarray(np.diag(B, -1) if betas is None else betas, dtype=float)
            self.fast = bool(np.all(self.alphas > 0))
        if not self.fast:
            P, s, Wt = np.linalg.svd(B, full_matrices=False)
            self.s = s
            self.Wt = Wt
            self.c = beta1 * P[0, :]

    def solve(self, lam: float) -> np.ndarray:
        if self.fast:
            return kernels.bidiag_tikhonov_numba(self.alphas, self.betas, self.beta1, float(lam))
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.where(self.s > 0, self.s / (self.s ** 2 + lam), 0.0)
        return self.Wt.T @ (f * self.c)


def golden_section(fun, lo: float, hi: float, evals: int = 60) -> tuple[float, float]:
    """Minimize ``fun`` on ``[lo, hi]`` with exactly ``evals`` function calls."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    best = (fc, c) if fc <= fd else (fd, d)
    for _ in range(max(evals - 2, 0)):
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
            if fc < best[0]:
                best = (fc, c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fun(d)
            if fd < best[0]:
                best = (fd, d)
    return best[1], best[0]


def _krylov_tikhonov(method, A, obs, Q, rule: LambdaRule, x_true, opts: SolverOptions) -> ReconResult:
    A = as_operator(A)
    b = np.asarray(obs.b, dtype=float)
    if rule.kind in ("optimal", "sweep") and x_true is None:
        raise ValueError(f"lambda rule {rule.kind!r} needs x_true")
    tr = Tracker(method, A, b, obs.delta, x_true, opts)
    xt = tr.x_true
    cap = min(opts.max_iters, min(A.shape))
    state = None
    basis_rows = None  # rows of the solution basis: V (identity prior) or Q V
    G = np.zeros((0, 0))  # Gram matrix of the solution basis
    g = np.zeros(0)       # projections of x_true on the solution basis
    xt2 = 0.0 if xt is None else float(xt @ xt)
    lo, hi = opts.lambda_log_range
    reason = STOP_MAX_ITERS
    x = np.zeros(A.shape[1])
    for it in range(opts.max_iters):
        try:
            state = golub_kahan_step(A, b, state, Q=Q, capacity=cap)
        except KrylovBreakdown as exc:
            if state is None or state.k == 0:
                raise
            log.debug("%s: %s", method, exc)
            reason = STOP_STAGNATION
            break
        k = state.k
        basis_rows = state.V if state.QV is None else state.QV
        newrow = basis_rows[k - 1]
        col = basis_rows[:k] @ newrow
        G2 = np.zeros((k, k))
        G2[: k - 1, : k - 1] = G
        G2[k - 1, :] = col
        G2[:, k - 1] = col
        G = G2
        if xt is not None:
            g = np.append(g, newrow @ xt)
        proj = ProjectedTikhonov(state.B, state.beta1, state.alphas[:k], state.betas[1: k + 1])

        def rre_sq(lam):
            z = proj.solve(lam)
            return max(z @ G @ z - 2.0 * (z @ g) + xt2, 0.0)

        if rule.kind == "fixed":
            lam = rule.value
        elif rule.kind == "optimal":
            ll, _ = golden_section(lambda t: rre_sq(10.0 ** t), lo, hi, opts.lambda_evals)
            lam = 10.0 ** ll
        else:
            grid = rule.grid or tuple(np.logspace(lo, hi, 25))
            lam = min(grid, key=rre_sq)
        z = proj.solve(lam)
        x = z @ basis_rows[:k]
        r = A.matvec(x) - b
        rn = np.linalg.norm(r)
        rre = None if xt is None else float(np.sqrt(rre_sq(lam)) / np.sqrt(xt2))
        if rre is not None:
            # the Gram shortcut loses accuracy once rre is near rounding level
            rre = tr.rre_of(x) if rre < 1e-6 else rre
        if tr.update(x, rn, rn * rn + lam * (z @ z), lam, rre=rre):
            reason = STOP_DP
            break
        if state.exhausted:
            reason = STOP_STAGNATION
            break
    return tr.result(x, reason, krylov_dim=0 if state is None else state.k)


def hybrid_tikhonov(A, obs, lambda_rule: LambdaRule | None = None, x_true=None,
                    opts: SolverOptions | None = None) -> ReconResult:
    """Tikhonov regularization projected onto ``K_k(A^T A, A^T b)``."""
    opts = opts or SolverOptions()
    return _krylov_tikhonov("tikhonov", A, obs, None, lambda_rule or opts.lambda_rule, x_true, opts)


def gen_tikhonov(A, obs, Q, lambda_rule: LambdaRule | None = None, x_true=None,
                 opts: SolverOptions | None = None) -> ReconResult:
    """Tikhonov with penalty ``lam ||x||^2_{Q^-1}``, solved as ``x = Q y``.

    ``y`` lives in ``K_k(A^T A Q, A^T b)``; ``Q`` is applied only through
    matrix-vector products, never inverted.
    """
    opts = opts or SolverOptions()
    return _krylov_tikhonov("gen-tikhonov", A, obs, Q, lambda_rule or opts.lambda_rule, x_true, opts)
