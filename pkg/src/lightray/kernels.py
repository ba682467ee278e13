"""Hot loops: ray-plane interpolation weights and CSR products.

Every kernel has a numba version and a numpy version with identical
outputs.  ``USE_NUMBA`` picks one at import time (see :mod:`._accel`);
the ``*_numpy`` / ``*_numba`` names stay importable so the benchmark and
the tests can compare both.
"""
from __future__ import annotations

import numpy as np

from ._accel import HAVE_NUMBA, njit, prange

USE_NUMBA = HAVE_NUMBA

# crossings closer than this (in units of h) to a node or the box edge snap to it
SNAP = 1e-10


# ---------------------------------------------------------------------------
# bilinear weights for a batch of rays
# ---------------------------------------------------------------------------

def ray_weights_numpy(sx, sy, dx, dy, fracs, x0, h, nx, scale):
    """Fixed-width weight table for rays ``(s, s + d)``.

    Returns ``cols`` (int64, ``-1`` marks an empty slot) and ``vals`` of
    shape ``(m, 4 * T)``.  Slot ``4 k + c`` holds corner ``c`` of the cell
    hit on plane ``k``, corners ordered ``(i, j), (i+1, j), (i, j+1),
    (i+1, j+1)`` so columns increase along each row.
    """
    m = sx.shape[0]
    T = fracs.shape[0]
    nsp = nx * nx
    # (m, T) crossing coordinates in grid units
    u = (sx[:, None] + dx[:, None] * fracs[None, :] - x0) / h
    v = (sy[:, None] + dy[:, None] * fracs[None, :] - x0) / h
    ru, rv = np.rint(u), np.rint(v)
    u = np.where(np.abs(u - ru) < SNAP, ru, u)
    v = np.where(np.abs(v - rv) < SNAP, rv, v)
    inside = (u >= 0) & (u <= nx - 1) & (v >= 0) & (v <= nx - 1)
    i = np.minimum(np.floor(u), nx - 2).astype(np.int64)
    j = np.minimum(np.floor(v), nx - 2).astype(np.int64)
    fu = u - i
    fv = v - j
    base = np.arange(T, dtype=np.int64)[None, :] * nsp + j * nx + i
    w = np.stack(
        [(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv], axis=-1
    ) * scale[:, None, None]
    c = np.stack([base, base + 1, base + nx, base + nx + 1], axis=-1)
    keep = inside[:, :, None] & (w != 0.0)
    cols = np.where(keep, c, -1).reshape(m, 4 * T)
    vals = np.where(keep, w, 0.0).reshape(m, 4 * T)
    return cols, vals


@njit(cache=True, parallel=True)
def ray_weights_numba(sx, sy, dx, dy, fracs, x0, h, nx, scale):
    m = sx.shape[0]
    T = fracs.shape[0]
    nsp = nx * nx
    cols = np.full((m, 4 * T), -1, dtype=np.int64)
    vals = np.zeros((m, 4 * T))
    for r in prange(m):
        for k in range(T):
            u = (sx[r] + dx[r] * fracs[k] - x0) / h
            v = (sy[r] + dy[r] * fracs[k] - x0) / h
            ru = np.rint(u)
            rv = np.rint(v)
            if abs(u - ru) < SNAP:
                u = ru
            if abs(v - rv) < SNAP:
                v = rv
            if u < 0 or u > nx - 1 or v < 0 or v > nx - 1:
                continue
            i = min(int(np.floor(u)), nx - 2)
            j = min(int(np.floor(v)), nx - 2)
            fu = u - i
            fv = v - j
            b = k * nsp + j * nx + i
            s = scale[r]
            w0 = (1 - fu) * (1 - fv) * s
            w1 = fu * (1 - fv) * s
            w2 = (1 - fu) * fv * s
            w3 = fu * fv * s
            o = 4 * k
            if w0 != 0.0:
                cols[r, o] = b
                vals[r, o] = w0
            if w1 != 0.0:
                cols[r, o + 1] = b + 1
                vals[r, o + 1] = w1
            if w2 != 0.0:
                cols[r, o + 2] = b + nx
                vals[r, o + 2] = w2
            if w3 != 0.0:
                cols[r, o + 3] = b + nx + 1
                vals[r, o + 3] = w3
    return cols, vals


# ---------------------------------------------------------------------------
# CSR products
# ---------------------------------------------------------------------------

def csr_matvec_numpy(indptr, indices, data, x, nrows):
    row = np.repeat(np.arange(nrows), np.diff(indptr))
    return np.bincount(row, weights=data * x[indices], minlength=nrows)


@njit(cache=True, parallel=True)
def csr_matvec_numba(indptr, indices, data, x, nrows):
    # unsigned indices skip the negative-index branch in the inner loop
    out = np.zeros(nrows)
    for r in prange(nrows):
        acc = 0.0
        for p in range(indptr[r], indptr[r + 1]):
            acc += data[p] * x[indices[p]]
        out[r] = acc
    return out


def csr_transpose(indptr, indices, data, ncols):
    """CSR arrays of the transpose; stable, so entry order is reproducible."""
    nrows = indptr.shape[0] - 1
    row = np.repeat(np.arange(nrows, dtype=np.int32), np.diff(indptr))
    order = np.argsort(indices, kind="stable")
    tptr = np.zeros(ncols + 1, dtype=np.int64)
    np.cumsum(np.bincount(indices, minlength=ncols), out=tptr[1:])
    return tptr, row[order], data[order]


def csr_matvec(indptr, indices, data, x, nrows):
    if USE_NUMBA:
        return csr_matvec_numba(indptr, indices.view(np.uint32), data, x, nrows)
    return csr_matvec_numpy(indptr, indices, data, x, nrows)


def ray_weights(sx, sy, dx, dy, fracs, x0, h, nx, scale):
    if USE_NUMBA:
        return ray_weights_numba(sx, sy, dx, dy, fracs, float(x0), float(h), int(nx), scale)
    return ray_weights_numpy(sx, sy, dx, dy, fracs, x0, h, nx, scale)


# ---------------------------------------------------------------------------
# projected Tikhonov problems on a lower bidiagonal matrix
# ---------------------------------------------------------------------------

@njit(cache=True)
def bidiag_tikhonov_numba(alphas, betas, beta1, lam):
    """Solve ``min ||B z - beta1 e1||^2 + lam ||z||^2`` in O(k).

    ``B`` is ``(k+1) x k`` lower bidiagonal with diagonal ``alphas`` and
    subdiagonal ``betas`` (``betas[j]`` sits below ``alphas[j]``).  Givens
    rotations first reduce ``B`` to upper bidiagonal ``R``, then fold the
    ``sqrt(lam) I`` rows into ``R`` one row at a time.
    """
    k = alphas.shape[0]
    rho = np.empty(k)
    theta = np.zeros(k)  # theta[j] couples z[j] and z[j+1]
    phi = np.empty(k)
    rbar = alphas[0]
    fbar = beta1
    for j in range(k):
        r = np.hypot(rbar, betas[j])
        c = rbar / r
        s = betas[j] / r
        rho[j] = r
        phi[j] = c * fbar
        fbar = s * fbar
        if j + 1 < k:
            theta[j] = s * alphas[j + 1]
            rbar = -c * alphas[j + 1]
    mu = np.sqrt(lam)
    sq = mu
    psi = 0.0
    for j in range(k):
        if sq != 0.0:
            r = np.hypot(rho[j], sq)
            c = rho[j] / r
            s = sq / r
            rho[j] = r
            ph = phi[j]
            phi[j] = c * ph + s * psi
            psi = -s * ph + c * psi
            fill = -s * theta[j]
            theta[j] = c * theta[j]
            if j + 1 < k:
                sq = np.hypot(mu, fill)
                if sq != 0.0:
                    psi = (fill / sq) * psi
                else:
                    psi = 0.0
    z = np.empty(k)
    z[k - 1] = phi[k - 1] / rho[k - 1]
    for j in range(k - 2, -1, -1):
        z[j] = (phi[j] - theta[j] * z[j + 1]) / rho[j]
    return z
