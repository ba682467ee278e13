"""Matérn prior covariance over the spacetime grid, applied through FFTs.

Distances are measured after mapping the box to the unit cube, so a
length scale of 0.05 means five percent of the box along every axis.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import fft

from .errors import DimensionMismatchError
from .grid import SpaceTimeGrid
from .rawio import write_raw

log = logging.getLogger(__name__)

__all__ = [
    "MaternParams",
    "CovarianceOperator",
    "matern_kernel",
    "build_covariance_operator",
    "apply_covariance",
    "dense_covariance",
]

NEG_TOL = 1e-12


@dataclass(frozen=True)
class MaternParams:
    nu: float = 1.5
    ell: float = 0.05
    sigma2: float = 1.0

    def __post_init__(self):
        if not (self.nu > 0 and self.ell > 0 and self.sigma2 > 0):
            raise ValueError("Matérn parameters nu, ell, sigma2 must all be positive")


def matern_kernel(r, p: MaternParams = MaternParams()):
    """``sigma2 (1 + sqrt(3) r / ell) exp(-sqrt(3) r / ell)``; only ``nu = 1.5``."""
    if p.nu != 1.5:
        raise NotImplementedError(f"Matérn smoothness nu={p.nu} is not supported (only 1.5)")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distance must be >= 0")
    s = np.sqrt(3.0) * r / p.ell
    out = p.sigma2 * (1.0 + s) * np.exp(-s)
    return float(out) if out.ndim == 0 else out


def _unit_spacings(g: SpaceTimeGrid) -> tuple[float, float, float]:
    """Node spacing along (t, y, x) after mapping each axis extent to [0, 1]."""
    span = g.spatial_extent[1] - g.spatial_extent[0]
    hs = g.h / span
    return g.dt / g.duration, hs, hs


@dataclass
class CovarianceOperator:
    dims: tuple[int, int, int]          # (T, ny, nx), state order
    embed: tuple[int, int, int]
    spectrum: np.ndarray                # rfftn layout over ``embed``
    spacing: tuple[float, float, float]
    params: MaternParams
    min_eig: float                      # smallest embedding eigenvalue (may be < 0)
    n_negative: int

    @property
    def shape(self) -> tuple[int, int]:
        n = int(np.prod(self.dims))
        return n, n

    def matvec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        n = self.shape[0]
        if v.shape != (n,):
            raise DimensionMismatchError(f"expected vector of length {n}, got {v.shape}")
        T, ny, nx = self.dims
        f = fft.rfftn(v.reshape(self.dims), s=self.embed)
        out = fft.irfftn(f * self.spectrum, s=self.embed)
        return np.ascontiguousarray(out[:T, :ny, :nx]).ravel()

    rmatvec = matvec

    def __matmul__(self, v):
        return self.matvec(v)

    def export_spectrum(self, path) -> None:
        write_raw(path, self.spectrum, dims=list(self.embed), nu=self.params.nu,
                  ell=self.params.ell, layout="rfftn")


def _lags(n: int, M: int) -> np.ndarray:
    """Signed lag of each embedding index; wraps at M/2 so the column is symmetric."""
    j = np.arange(M)
    return np.where(j <= M // 2, j, j - M)


def build_covariance_operator(g: SpaceTimeGrid, p: MaternParams = MaternParams()) -> CovarianceOperator:
    dims = (g.T, g.nx, g.nx)
    embed = tuple(fft.next_fast_len(max(2 * d - 1, 1), real=True) for d in dims)
    spacing = _unit_spacings(g)
    lt, ly, lx = (_lags(d, M) * s for d, M, s in zip(dims, embed, spacing))
    r = np.sqrt(lt[:, None, None] ** 2 + ly[None, :, None] ** 2 + lx[None, None, :] ** 2)
    col = matern_kernel(r, p)
    spec = fft.rfftn(col).real
    # The restricted product is exact for any embedding, so negative
    # eigenvalues (long length scales) are kept rather than clipped.
    neg = spec < -NEG_TOL * max(spec.max(), 1.0)
    if neg.any():
        log.info("circulant embedding is indefinite: %d negative eigenvalues (min %.3e)",
                 neg.sum(), spec.min())
    return CovarianceOperator(dims, embed, spec, spacing, p, float(spec.min()), int(neg.sum()))


def apply_covariance(Q: CovarianceOperator, v) -> np.ndarray:
    return Q.matvec(v)


def dense_covariance(g: SpaceTimeGrid, p: MaternParams = MaternParams()) -> np.ndarray:
    """Explicit ``n x n`` kernel matrix from pairwise node distances (small grids only)."""
    st, sy, sx = _unit_spacings(g)
    k, iy, ix = np.meshgrid(np.arange(g.T), np.arange(g.nx), np.arange(g.nx), indexing="ij")
    pts = np.stack([k.ravel() * st, iy.ravel() * sy, ix.ravel() * sx], axis=1)
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    return matern_kernel(d, p)
