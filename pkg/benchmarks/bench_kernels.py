"""Numba versus numpy timings for the hot kernels.

    python benchmarks/bench_kernels.py [--nx 25] [--T 10] [--repeat 5]

Both implementations are imported directly, so the environment flag does
not matter here.  Each timing is the best of ``--repeat`` runs after one
warm-up call (which also triggers JIT compilation).  scipy's CSR product
is listed as a reference point for the matvec.
"""
import argparse
import time

import numpy as np

from lightray import kernels
from lightray._accel import HAVE_NUMBA
from lightray.forward import RayPolicy, assemble_operator, enumerate_rays
from lightray.grid import build_grid


def best_of(fn, repeat):
    fn()
    out = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out = min(out, time.perf_counter() - t0)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nx", type=int, default=25)
    ap.add_argument("--T", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is unavailable (or disabled); nothing to compare")

    g = build_grid(args.nx, T=args.T)
    rays = enumerate_rays(g, RayPolicy())
    A = assemble_operator(g, rays)
    print(f"grid {args.nx}x{args.nx}x{args.T}: {A.m} rays, {A.ncols} unknowns, {A.nnz} nonzeros")
    print(f"{'kernel':<28}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")

    def row(name, t_np, t_nb):
        print(f"{name:<28}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.1f}")

    # bilinear weights for every ray
    xs, ys = g.node_xy()
    sx, sy = xs[rays.source], ys[rays.source]
    dx, dy = xs[rays.detector] - sx, ys[rays.detector] - sy
    fracs = (g.plane_times - g.time_extent[0]) / g.duration
    scale = np.ones(len(sx))
    x0 = float(g.nodes[0])
    wargs = (sx, sy, dx, dy, fracs, x0, g.h, g.nx, scale)
    c1, v1 = kernels.ray_weights_numpy(*wargs)
    c2, v2 = kernels.ray_weights_numba(*wargs)
    assert np.array_equal(c1, c2) and np.allclose(v1, v2, rtol=0, atol=1e-15)
    row("ray weights", best_of(lambda: kernels.ray_weights_numpy(*wargs), args.repeat),
        best_of(lambda: kernels.ray_weights_numba(*wargs), args.repeat))

    # forward and adjoint products
    rng = np.random.default_rng(0)
    x = rng.standard_normal(A.ncols)
    y = rng.standard_normal(A.m)
    tptr, tind, tdat = A._transpose()
    u32 = A.indices.view(np.uint32)
    tu32 = tind.view(np.uint32)
    row("A x", best_of(lambda: kernels.csr_matvec_numpy(A.indptr, A.indices, A.data, x, A.m), args.repeat),
        best_of(lambda: kernels.csr_matvec_numba(A.indptr, u32, A.data, x, A.m), args.repeat))
    row("A^T y", best_of(lambda: kernels.csr_matvec_numpy(tptr, tind, tdat, y, A.ncols), args.repeat),
        best_of(lambda: kernels.csr_matvec_numba(tptr, tu32, tdat, y, A.ncols), args.repeat))
    S = A.to_scipy()
    print(f"{'A x (scipy reference)':<28}{1e3 * best_of(lambda: S @ x, args.repeat):>12.2f}")

    # projected Tikhonov solve on a k=400 bidiagonal, 60 values of lambda
    k = 400
    a = rng.uniform(0.1, 3.0, k)
    b = rng.uniform(0.01, 2.0, k)
    B = np.zeros((k + 1, k))
    B[np.arange(k), np.arange(k)] = a
    B[np.arange(1, k + 1), np.arange(k)] = b
    lams = np.logspace(-10, 2, 60)

    def svd_path():
        P, s, Wt = np.linalg.svd(B, full_matrices=False)
        c = P[0] * 2.0
        for lam in lams:
            Wt.T @ (s / (s * s + lam) * c)

    def givens_path():
        for lam in lams:
            kernels.bidiag_tikhonov_numba(a, b, 2.0, lam)

    row("projected Tikhonov (k=400)", best_of(svd_path, args.repeat), best_of(givens_path, args.repeat))


if __name__ == "__main__":
    main()
