"""Discrete light ray transform.

Rays run from a source node on the ``t = t_min`` plane to a detector node
on the ``t = t_max`` plane.  Each ray crosses every event plane once; the
crossing contributes the bilinear interpolation weights of its cell.
Row ``r`` of the operator belongs to ray ``r`` and column block ``k`` to
event plane ``k``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from . import kernels
from .errors import DimensionMismatchError, ZeroDataError
from .grid import SpaceTimeGrid

log = logging.getLogger(__name__)

__all__ = [
    "RayPolicy",
    "Ray",
    "RaySet",
    "SparseOperator",
    "Observation",
    "enumerate_rays",
    "bilinear_weights",
    "assemble_operator",
    "apply",
    "apply_adjoint",
    "add_noise",
    "noise_generator",
]

_CHUNK = 16384


@dataclass(frozen=True)
class RayPolicy:
    """Which (source, detector) pairs count as rays.

    ``null-shell`` keeps pairs whose spatial separation is within ``eps_ray``
    of the light travel distance ``t_max - t_min``; ``cone-interior`` keeps
    everything inside the light cone.  ``eps_ray=None`` means ``h / 2``.
    """

    mode: str = "null-shell"
    eps_ray: float | None = None

    def __post_init__(self):
        if self.mode not in ("null-shell", "cone-interior"):
            raise ValueError(f"unknown ray policy {self.mode!r}")
        if self.eps_ray is not None and self.eps_ray < 0:
            raise ValueError("eps_ray must be >= 0")

    def tolerance(self, g: SpaceTimeGrid) -> float:
        return g.h / 2 if self.eps_ray is None else float(self.eps_ray)


class Ray(NamedTuple):
    source_index: int
    detector_index: int


@dataclass(frozen=True)
class RaySet:
    """Admissible rays as two index arrays, ordered by source then detector."""

    grid: SpaceTimeGrid
    source: np.ndarray
    detector: np.ndarray

    def __len__(self) -> int:
        return int(self.source.shape[0])

    def __iter__(self) -> Iterator[Ray]:
        for s, d in zip(self.source.tolist(), self.detector.tolist()):
            yield Ray(s, d)

    def __getitem__(self, i) -> Ray:
        return Ray(int(self.source[i]), int(self.detector[i]))

    @classmethod
    def from_pairs(cls, grid: SpaceTimeGrid, pairs) -> "RaySet":
        arr = np.asarray(list(pairs), dtype=np.int64).reshape(-1, 2)
        return cls(grid, arr[:, 0].copy(), arr[:, 1].copy())

    def to_csv(self, path) -> None:
        nx = self.grid.nx
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ray_id", "src_ix", "src_iy", "det_ix", "det_iy"])
            for r, (s, d) in enumerate(zip(self.source.tolist(), self.detector.tolist())):
                w.writerow([r, s % nx, s // nx, d % nx, d // nx])

    @classmethod
    def from_csv(cls, grid: SpaceTimeGrid, path) -> "RaySet":
        nx = grid.nx
        src, det = [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                src.append(int(row["src_iy"]) * nx + int(row["src_ix"]))
                det.append(int(row["det_iy"]) * nx + int(row["det_ix"]))
        return cls(grid, np.asarray(src, dtype=np.int64), np.asarray(det, dtype=np.int64))


def _admissible_offsets(g: SpaceTimeGrid, policy: RayPolicy) -> np.ndarray:
    """Lattice displacements ``(di, dj)`` admitted by ``policy``, in detector order."""
    n = g.nx
    d = np.arange(-(n - 1), n)
    dj, di = np.meshgrid(d, d, indexing="ij")
    dist = g.h * np.hypot(di, dj)
    L = g.duration
    if policy.mode == "null-shell":
        ok = np.abs(dist - L) <= policy.tolerance(g)
    else:
        ok = dist <= L
    return np.stack([di[ok], dj[ok]], axis=1)  # row-major over (dj, di)


def enumerate_rays(g: SpaceTimeGrid, policy: RayPolicy | None = None) -> RaySet:
    policy = policy or RayPolicy()
    off = _admissible_offsets(g, policy)
    n = g.nx
    iy, ix = np.divmod(np.arange(n * n), n)
    tx = ix[:, None] + off[None, :, 0]
    ty = iy[:, None] + off[None, :, 1]
    ok = (tx >= 0) & (tx < n) & (ty >= 0) & (ty < n)
    src = np.broadcast_to(np.arange(n * n)[:, None], ok.shape)[ok]
    det = (ty * n + tx)[ok]
    return RaySet(g, src.astype(np.int64), det.astype(np.int64))


def bilinear_weights(point, g: SpaceTimeGrid) -> list[tuple[int, float]]:
    """Interpolation weights of ``point`` on the spatial grid.

    Returns ``(spatial_index, weight)`` pairs with nonzero weight; an empty
    list means the point lies outside the box.
    """
    px, py = (float(v) for v in point)
    cols, vals = kernels.ray_weights_numpy(
        np.array([px]), np.array([py]), np.zeros(1), np.zeros(1),
        np.zeros(1), g.spatial_extent[0], g.h, g.nx, np.ones(1),
    )
    return [(int(c), float(w)) for c, w in zip(cols[0], vals[0]) if c >= 0]


@dataclass
class SparseOperator:
    """Ray-trace matrix in CSR form with a cached transpose for the adjoint."""

    shape: tuple[int, int]
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    rays: RaySet | None = None

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        if max(self.shape) >= 2 ** 31:
            raise ValueError("operator dimensions must stay below 2**31")
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int32)
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        self._t = None

    @property
    def m(self) -> int:
        return self.shape[0]

    @property
    def ncols(self) -> int:
        return self.shape[1]

    @property
    def nnz(self) -> int:
        return int(self.data.shape[0])

    @property
    def row_map(self) -> np.ndarray:
        if self.rays is None:
            raise AttributeError("operator was built without a ray list")
        return np.stack([self.rays.source, self.rays.detector], axis=1)

    def _transpose(self):
        if self._t is None:
            self._t = kernels.csr_transpose(self.indptr, self.indices, self.data, self.ncols)
        return self._t

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.ncols,):
            raise DimensionMismatchError(f"expected vector of length {self.ncols}, got {x.shape}")
        return kernels.csr_matvec(self.indptr, self.indices, self.data, x, self.m)

    def rmatvec(self, y):
        y = np.asarray(y, dtype=float)
        if y.shape != (self.m,):
            raise DimensionMismatchError(f"expected vector of length {self.m}, got {y.shape}")
        tptr, tind, tdat = self._transpose()
        return kernels.csr_matvec(tptr, tind, tdat, y, self.ncols)

    __matmul__ = matvec

    @property
    def T(self) -> "_Adjoint":
        return _Adjoint(self)

    def to_scipy(self):
        from scipy.sparse import csr_matrix

        return csr_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    def toarray(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def frobenius_norm(self) -> float:
        return float(np.linalg.norm(self.data))

    @classmethod
    def from_scipy(cls, mat, rays=None) -> "SparseOperator":
        mat = mat.tocsr()
        mat.sort_indices()
        return cls(mat.shape, mat.indptr, mat.indices, mat.data, rays)

    @classmethod
    def from_dense(cls, a) -> "SparseOperator":
        from scipy.sparse import csr_matrix

        return cls.from_scipy(csr_matrix(np.asarray(a, dtype=float)))

    def write_matrix_market(self, path) -> None:
        from scipy.io import mmwrite

        mmwrite(str(path), self.to_scipy(), comment="lightray ray-trace operator", field="real",
                symmetry="general")

    @classmethod
    def read_matrix_market(cls, path, rays=None) -> "SparseOperator":
        from scipy.io import mmread

        return cls.from_scipy(mmread(str(path)), rays)


class _Adjoint:
    def __init__(self, op: SparseOperator):
        self.op = op
        self.shape = op.shape[::-1]

    def __matmul__(self, y):
        return self.op.rmatvec(y)


def assemble_operator(
    g: SpaceTimeGrid, rays: RaySet, scale_by_segment_length: bool = False
) -> SparseOperator:
    """Build the ray-trace matrix for ``rays`` on grid ``g``.

    With ``scale_by_segment_length`` every plane's weights are multiplied by
    the spacetime length of the ray segment owned by that plane.
    """
    ncols = g.size
    m = len(rays)
    if m == 0:
        return SparseOperator((0, ncols), np.zeros(1, np.int64), np.zeros(0, np.int64),
                              np.zeros(0), rays)
    xs = g.nodes
    n = g.nx
    fracs = (g.plane_times - g.time_extent[0]) / g.duration
    ptr = [np.zeros(1, dtype=np.int64)]
    idx, dat = [], []
    offset = 0
    for lo in range(0, m, _CHUNK):
        s = rays.source[lo:lo + _CHUNK]
        d = rays.detector[lo:lo + _CHUNK]
        sx, sy = xs[s % n], xs[s // n]
        dx, dy = xs[d % n] - sx, xs[d // n] - sy
        if scale_by_segment_length:
            scale = g.dt * np.sqrt(1.0 + (dx * dx + dy * dy) / g.duration ** 2)
        else:
            scale = np.ones(s.shape[0])
        cols, vals = kernels.ray_weights(sx, sy, dx, dy, fracs, xs[0], g.h, n, scale)
        keep = cols >= 0
        counts = keep.sum(axis=1)
        ptr.append(offset + np.cumsum(counts))
        offset += int(counts.sum())
        idx.append(cols[keep])
        dat.append(vals[keep])
    op = SparseOperator((m, ncols), np.concatenate(ptr), np.concatenate(idx),
                        np.concatenate(dat), rays)
    log.debug("assembled %d x %d operator with %d nonzeros", m, ncols, op.nnz)
    return op


def apply(A: SparseOperator, x) -> np.ndarray:
    return A.matvec(x)


def apply_adjoint(A: SparseOperator, y) -> np.ndarray:
    return A.rmatvec(y)


@dataclass(frozen=True)
class Observation:
    b: np.ndarray
    e: np.ndarray
    delta: float
    level: float


def noise_generator(seed: int) -> np.random.Generator:
    """Counter-based Philox stream; normals come from numpy's ziggurat sampler."""
    return np.random.Generator(np.random.Philox(int(seed)))


def add_noise(b_clean, v: float, seed: int = 0) -> Observation:
    """Gaussian noise scaled so that ``||e|| = v/100 * ||b_clean||``."""
    b_clean = np.asarray(b_clean, dtype=float)
    if v < 0:
        raise ValueError("noise level must be >= 0")
    if v == 0:
        e = np.zeros_like(b_clean)
        return Observation(b_clean.copy(), e, 0.0, 0.0)
    bnorm = np.linalg.norm(b_clean)
    if bnorm == 0:
        raise ZeroDataError("cannot scale relative noise for zero clean data")
    e = noise_generator(seed).standard_normal(b_clean.shape[0])
    e *= (v / 100.0) * bnorm / np.linalg.norm(e)
    return Observation(b_clean + e, e, float(np.linalg.norm(e)), float(v))

