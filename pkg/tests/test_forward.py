import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lightray.errors import DimensionMismatchError, ZeroDataError
from lightray.forward import (
    RayPolicy,
    RaySet,
    SparseOperator,
    add_noise,
    apply,
    apply_adjoint,
    assemble_operator,
    bilinear_weights,
    enumerate_rays,
)
from lightray.grid import Phantom, build_grid, rasterize_phantom


def reference_row(g, s, d):
    """Slow scalar re-derivation of one operator row as a {column: weight} dict."""
    n, h, x0 = g.nx, g.h, g.spatial_extent[0]
    sx, sy = x0 + (s % n) * h, x0 + (s // n) * h
    ex, ey = x0 + (d % n) * h, x0 + (d // n) * h
    row = {}
    for k, t in enumerate(g.plane_times):
        f = (t - g.time_extent[0]) / g.duration
        u = (sx + (ex - sx) * f - x0) / h
        v = (sy + (ey - sy) * f - x0) / h
        u, v = (round(u) if abs(u - round(u)) < 1e-10 else u), (round(v) if abs(v - round(v)) < 1e-10 else v)
        if not (0 <= u <= n - 1 and 0 <= v <= n - 1):
            continue
        i, j = min(math.floor(u), n - 2), min(math.floor(v), n - 2)
        a, b = u - i, v - j
        for di, dj, w in ((0, 0, (1 - a) * (1 - b)), (1, 0, a * (1 - b)), (0, 1, (1 - a) * b), (1, 1, a * b)):
            if w != 0:
                col = k * n * n + (j + dj) * n + (i + di)
                row[col] = row.get(col, 0.0) + w
    return row


class TestEnumerateRays:
    def test_null_shell_centre_source(self, tiny_grid):
        rays = enumerate_rays(tiny_grid, RayPolicy("null-shell"))
        dets = sorted(d for s, d in rays if s == 4)
        # |sqrt(2) - 1| = 0.414 <= h/2, so the corners are on the shell too
        assert dets == [0, 1, 2, 3, 5, 6, 7, 8]

    def test_null_shell_tight_tolerance_gives_axis_neighbours(self, tiny_grid):
        rays = enumerate_rays(tiny_grid, RayPolicy("null-shell", eps_ray=0.4))
        assert sorted(d for s, d in rays if s == 4) == [1, 3, 5, 7]

    def test_cone_interior_centre_source(self, tiny_grid):
        rays = enumerate_rays(tiny_grid, RayPolicy("cone-interior"))
        assert sorted(d for s, d in rays if s == 4) == [1, 3, 4, 5, 7]

    def test_zero_tolerance_empty(self):
        # h = 0.3, duration 1: no lattice distance equals 1 exactly
        g = build_grid(5, (-0.6, 0.6), 1, (0, 1))
        assert len(enumerate_rays(g, RayPolicy(eps_ray=0.0))) == 0

    def test_ordering(self, desk_grid):
        rays = enumerate_rays(desk_grid)
        key = rays.source * desk_grid.n_spatial + rays.detector
        assert np.all(np.diff(key) > 0)

    def test_brute_force_enumeration(self):
        g = build_grid(7, (-1.5, 1.5), 3, (0, 1.2))
        tol = g.h / 2
        xs, ys = g.node_xy()
        pairs = [(s, d) for s in range(49) for d in range(49)
                 if abs(math.hypot(xs[d] - xs[s], ys[d] - ys[s]) - 1.2) <= tol]
        rays = enumerate_rays(g)
        assert list(map(tuple, rays)) == pairs

    def test_desk_counts(self, desk_grid, desk_operator):
        # frozen from the first assembly; guards against silent geometry changes
        assert desk_operator.shape == (22036, 6250)
        assert desk_operator.nnz == 807928

    def test_bad_policy(self):
        with pytest.raises(ValueError):
            RayPolicy("diagonal")
        with pytest.raises(ValueError):
            RayPolicy(eps_ray=-1.0)

    def test_csv_roundtrip(self, tmp_path, desk_grid):
        rays = enumerate_rays(desk_grid)
        rays.to_csv(tmp_path / "rays.csv")
        back = RaySet.from_csv(desk_grid, tmp_path / "rays.csv")
        np.testing.assert_array_equal(back.source, rays.source)
        np.testing.assert_array_equal(back.detector, rays.detector)
        header = (tmp_path / "rays.csv").read_text().splitlines()[0]
        assert header == "ray_id,src_ix,src_iy,det_ix,det_iy"


class TestBilinearWeights:
    def test_on_node(self, tiny_grid):
        assert bilinear_weights((0.0, 1.0), tiny_grid) == [(7, 1.0)]

    def test_cell_centre(self, tiny_grid):
        w = bilinear_weights((0.5, 0.5), tiny_grid)
        assert sorted(c for c, _ in w) == [4, 5, 7, 8]
        assert all(v == 0.25 for _, v in w)

    def test_edge_midpoint(self, tiny_grid):
        assert bilinear_weights((0.5, 0.0), tiny_grid) == [(4, 0.5), (5, 0.5)]

    def test_outside(self, tiny_grid):
        assert bilinear_weights((1.01, 0.0), tiny_grid) == []

    def test_far_corner(self, tiny_grid):
        assert bilinear_weights((1.0, 1.0), tiny_grid) == [(8, 1.0)]

    @given(st.floats(-3, 3), st.floats(-3, 3))
    @settings(max_examples=200, deadline=None)
    def test_partition_of_unity_and_reproduction(self, px, py):
        g = build_grid(25)
        w = bilinear_weights((px, py), g)
        assert abs(sum(v for _, v in w) - 1.0) < 1e-12
        assert all(0 <= v <= 1 for _, v in w)
        xs, ys = g.node_xy()
        # bilinear interpolation reproduces affine functions
        assert abs(sum(v * (2 * xs[c] - ys[c] + 1) for c, v in w) - (2 * px - py + 1)) < 1e-11


class TestAssemble:
    def test_one_ray(self, tiny_grid):
        A = assemble_operator(tiny_grid, RaySet.from_pairs(tiny_grid, [(4, 5)]))
        assert A.shape == (1, 9)
        np.testing.assert_array_equal(A.indices, [4, 5])
        np.testing.assert_array_equal(A.data, [0.5, 0.5])
        assert apply(A, np.ones(9)) == pytest.approx([1.0])

    def test_paper_column_count(self):
        g = build_grid(51, T=20)
        assert g.size == 52020

    def test_empty(self, tiny_grid):
        A = assemble_operator(tiny_grid, RaySet.from_pairs(tiny_grid, []))
        assert A.shape == (0, 9)
        assert apply(A, np.ones(9)).shape == (0,)
        np.testing.assert_array_equal(apply_adjoint(A, np.zeros(0)), np.zeros(9))

    def test_against_scalar_reference(self, desk_grid, desk_operator, rng):
        rows = rng.choice(desk_operator.m, 300, replace=False)
        S = desk_operator.to_scipy()
        for r in rows:
            s, d = desk_operator.rays[r]
            ref = reference_row(desk_grid, s, d)
            got = S.getrow(r)
            assert dict(zip(got.indices.tolist(), got.data.tolist())) == pytest.approx(ref, abs=1e-14)

    def test_row_structure(self, desk_grid, desk_operator):
        A = desk_operator
        T, nsp = desk_grid.T, desk_grid.n_spatial
        assert np.diff(A.indptr).max() <= 4 * T
        assert A.data.min() > 0 and A.data.max() <= 1
        S = A.to_scipy()
        block_sums = np.stack([np.asarray(S[:, k * nsp:(k + 1) * nsp].sum(axis=1)).ravel() for k in range(T)])
        # every crossing in the box carries total weight 1
        assert np.allclose(block_sums[block_sums > 0], 1.0, atol=1e-12)

    def test_paper_row_bound(self):
        g = build_grid(51, T=20)
        rays = enumerate_rays(g)
        A = assemble_operator(g, RaySet(g, rays.source[:5000], rays.detector[:5000]))
        assert np.diff(A.indptr).max() <= 80

    def test_block_consistency(self, desk_grid, desk_operator, rng):
        x = rng.standard_normal(desk_grid.size)
        nsp = desk_grid.n_spatial
        total = np.zeros(desk_operator.m)
        for k in range(desk_grid.T):
            xk = np.zeros_like(x)
            xk[k * nsp:(k + 1) * nsp] = x[k * nsp:(k + 1) * nsp]
            total += apply(desk_operator, xk)
        np.testing.assert_allclose(total, apply(desk_operator, x), atol=1e-12)

    def test_segment_scaling(self, tiny_grid):
        A = assemble_operator(tiny_grid, RaySet.from_pairs(tiny_grid, [(4, 5)]), scale_by_segment_length=True)
        np.testing.assert_allclose(A.data, 0.5 * math.sqrt(2.0))

    def test_row_map(self, desk_operator):
        rm = desk_operator.row_map
        assert rm.shape == (desk_operator.m, 2)
        assert tuple(rm[0]) == tuple(desk_operator.rays[0])

    def test_matrix_market_roundtrip(self, tmp_path, desk_operator):
        desk_operator.write_matrix_market(tmp_path / "A.mtx")
        head = (tmp_path / "A.mtx").read_text().splitlines()[0]
        assert head == "%%MatrixMarket matrix coordinate real general"
        B = SparseOperator.read_matrix_market(tmp_path / "A.mtx")
        assert (B.to_scipy() != desk_operator.to_scipy()).nnz == 0

    def test_deterministic(self, desk_grid, desk_operator):
        B = assemble_operator(desk_grid, enumerate_rays(desk_grid))
        assert np.array_equal(B.indptr, desk_operator.indptr)
        assert np.array_equal(B.indices, desk_operator.indices)
        assert B.data.tobytes() == desk_operator.data.tobytes()


class TestApply:
    def test_zero(self, desk_operator):
        assert not apply(desk_operator, np.zeros(desk_operator.ncols)).any()
        assert not apply_adjoint(desk_operator, np.zeros(desk_operator.m)).any()

    def test_matches_scipy(self, desk_operator, rng):
        S = desk_operator.to_scipy()
        x = rng.standard_normal(desk_operator.ncols)
        y = rng.standard_normal(desk_operator.m)
        np.testing.assert_allclose(desk_operator @ x, S @ x, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(desk_operator.T @ y, S.T @ y, rtol=1e-12, atol=1e-11)

    def test_tiny_adjoint_dense(self, tiny_grid, rng):
        A = assemble_operator(tiny_grid, enumerate_rays(tiny_grid))
        D = A.toarray()
        for _ in range(10):
            u, w = rng.standard_normal(9), rng.standard_normal(A.m)
            lhs, rhs = apply(A, u) @ w, u @ apply_adjoint(A, w)
            assert abs(lhs - rhs) <= 1e-12 * np.linalg.norm(u) * np.linalg.norm(w) * A.frobenius_norm()
            np.testing.assert_allclose(apply_adjoint(A, w), D.T @ w, atol=1e-13)

    def test_dimension_mismatch(self, desk_operator):
        with pytest.raises(DimensionMismatchError):
            apply(desk_operator, np.zeros(5))
        with pytest.raises(DimensionMismatchError):
            apply_adjoint(desk_operator, np.zeros(5))

    def test_ones_row_sums(self, desk_grid, desk_operator):
        # a constant state returns the number of in-box crossings of each ray
        counts = apply(desk_operator, np.ones(desk_grid.size))
        assert np.all(counts <= desk_grid.T + 1e-12) and counts.max() == pytest.approx(desk_grid.T)


class TestNoise:
    def test_zero_level(self):
        b = np.arange(5.0)
        obs = add_noise(b, 0, seed=3)
        assert obs.delta == 0 and not obs.e.any() and np.array_equal(obs.b, b)

    def test_scaling(self):
        b = np.zeros(100)
        b[0] = 10.0
        obs = add_noise(b, 5, seed=1)
        assert obs.delta == pytest.approx(0.5, rel=1e-12)
        assert np.linalg.norm(obs.e) == pytest.approx(0.5, rel=1e-12)
        np.testing.assert_allclose(obs.b, b + obs.e)

    def test_level_relative_to_clean_data(self, desk_grid, desk_operator):
        bt = apply(desk_operator, rasterize_phantom(Phantom("f1"), desk_grid))
        obs = add_noise(bt, 5, seed=2)
        assert np.linalg.norm(obs.e) / np.linalg.norm(bt) == pytest.approx(0.05, rel=1e-12)

    def test_deterministic(self):
        b = np.linspace(1, 2, 50)
        assert add_noise(b, 5, seed=7).e.tobytes() == add_noise(b, 5, seed=7).e.tobytes()
        assert not np.array_equal(add_noise(b, 5, seed=7).e, add_noise(b, 5, seed=8).e)

    def test_zero_data(self):
        with pytest.raises(ZeroDataError):
            add_noise(np.zeros(4), 5, seed=0)
        with pytest.raises(ValueError):
            add_noise(np.ones(4), -1, seed=0)
