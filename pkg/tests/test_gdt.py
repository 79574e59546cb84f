import time

import numpy as np
import pytest

from flexparse.gdt import QuadPenalty, dt1d_max, dt2d_max


def naive_dt1d(values, a, b):
    n = len(values)
    out = np.empty(n)
    arg = np.empty(n, dtype=int)
    for p in range(n):
        cand = [values[q] + a * (p - q) ** 2 + b * (p - q) for q in range(n)]
        out[p] = max(cand)
        arg[p] = int(np.argmax(cand))  # first max = smallest q
    return out, arg


def naive_dt2d(grid, pen):
    H, W = grid.shape
    out = np.full((H, W), -np.inf)
    arg = np.zeros((H, W, 2), dtype=int)
    for yi in range(H):
        for xi in range(W):
            for yk in range(H):
                for xk in range(W):
                    dx = xk - xi - pen.offset[0]
                    dy = yk - yi - pen.offset[1]
                    v = grid[yk, xk] + pen.ax * dx * dx + pen.bx * dx + pen.ay * dy * dy + pen.by * dy
                    if v > out[yi, xi]:
                        out[yi, xi] = v
                        arg[yi, xi] = (yk, xk)
    return out, arg


def random_penalty(rng):
    return QuadPenalty(
        ax=-float(rng.uniform(0.1, 2.0)),
        bx=float(rng.uniform(-1.0, 1.0)),
        ay=-float(rng.uniform(0.1, 2.0)),
        by=float(rng.uniform(-1.0, 1.0)),
        offset=(float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3))),
    )


class TestDt1d:
    def test_spike_with_tie_to_smallest(self):
        out, arg = dt1d_max([1.0, 0.0, 0.0], -1.0, 0.0)
        assert out.tolist() == [1.0, 0.0, 0.0]
        # at p=1 the candidates q=0 and q=1 tie at 0; the smaller q wins
        assert arg.tolist() == [0, 0, 2]

    def test_constant_input_maps_to_identity(self):
        for a in (-0.3, -2.0):
            out, arg = dt1d_max(np.full(9, 4.25), a, 0.0)
            assert np.allclose(out, 4.25)
            assert arg.tolist() == list(range(9))

    def test_matches_naive(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(1, 65))
            vals = rng.uniform(-5, 5, n)
            a = -float(rng.uniform(0.1, 2.0))
            b = float(rng.uniform(-1.0, 1.0))
            out, arg = dt1d_max(vals, a, b)
            ref_out, ref_arg = naive_dt1d(vals, a, b)
            np.testing.assert_allclose(out, ref_out, atol=1e-9)
            np.testing.assert_array_equal(arg, ref_arg)

    def test_rejects_nonconcave(self):
        with pytest.raises(ValueError):
            dt1d_max([1.0, 2.0], 0.0, 0.0)
        with pytest.raises(ValueError):
            dt1d_max([1.0, 2.0], 0.5, 0.0)


class TestDt2d:
    def test_single_cell(self):
        out, arg = dt2d_max(np.array([[3.5]]), QuadPenalty(-1.0, 0.0, -1.0, 0.0))
        assert out[0, 0] == pytest.approx(3.5)
        assert arg[0, 0].tolist() == [0, 0]

    def test_separability_matches_naive(self):
        rng = np.random.default_rng(1)
        grid = rng.uniform(-4, 4, (5, 7))
        pen = random_penalty(rng)
        out, arg = dt2d_max(grid, pen)
        ref_out, ref_arg = naive_dt2d(grid, pen)
        np.testing.assert_allclose(out, ref_out, atol=1e-9)

    def test_spike_with_offset(self):
        grid = np.zeros((4, 6))
        grid[2, 3] = 9.0
        out, arg = dt2d_max(grid, QuadPenalty(-1.0, 0.0, -1.0, 0.0, offset=(1.0, 0.0)))
        peak = np.unravel_index(out.argmax(), out.shape)
        assert peak == (2, 2)
        assert out[2, 2] == pytest.approx(9.0)
        assert arg[2, 2].tolist() == [2, 3]

    def test_random_grids_match_naive(self):
        rng = np.random.default_rng(2)
        for _ in range(60):
            H = int(rng.integers(1, 17))
            W = int(rng.integers(1, 17))
            grid = rng.uniform(-6, 6, (H, W))
            pen = random_penalty(rng)
            out, arg = dt2d_max(grid, pen)
            ref_out, _ = naive_dt2d(grid, pen)
            np.testing.assert_allclose(out, ref_out, atol=1e-9)
            # reported argmax must actually achieve the maximum
            for yi in range(H):
                for xi in range(W):
                    yk, xk = arg[yi, xi]
                    dx = xk - xi - pen.offset[0]
                    dy = yk - yi - pen.offset[1]
                    v = grid[yk, xk] + pen.ax * dx * dx + pen.bx * dx + pen.ay * dy * dy + pen.by * dy
                    assert v == pytest.approx(out[yi, xi], abs=1e-9)

    def test_shift_covariance(self):
        rng = np.random.default_rng(3)
        grid = rng.uniform(-2, 2, (8, 8))
        pen = QuadPenalty(-0.5, 0.2, -0.8, -0.1, offset=(0.0, 0.0))
        big = np.full((12, 12), grid.min() - 50.0)
        big[2:10, 2:10] = grid
        out_small, _ = dt2d_max(grid, pen)
        out_big, _ = dt2d_max(big, pen)
        # interior cells see the same neighborhood after translation
        np.testing.assert_allclose(out_big[5:7, 5:7], out_small[3:5, 3:5], atol=1e-9)

    def test_zero_displacement_dominance(self):
        rng = np.random.default_rng(4)
        grid = rng.uniform(-3, 3, (9, 9))
        pen = QuadPenalty(-0.7, 0.3, -0.4, 0.0, offset=(2.0, -1.0))
        out, _ = dt2d_max(grid, pen)
        for yi in range(9):
            for xi in range(9):
                xk, yk = xi + 2, yi - 1
                if 0 <= xk < 9 and 0 <= yk < 9:
                    assert out[yi, xi] >= grid[yk, xk] - 1e-12

    def test_rejects_invalid_penalty(self):
        with pytest.raises(ValueError):
            QuadPenalty(0.1, 0.0, -1.0, 0.0)
        with pytest.raises(ValueError):
            dt2d_max(np.zeros((2, 2)), "not a penalty")

    def test_linear_time_scaling(self):
        # doubling the grid side quadruples the cell count; a linear-time
        # transform should stay around 4x. Interleaved timing pairs cancel
        # machine drift; the median keeps outliers out.
        pen = QuadPenalty(-0.5, 0.1, -0.5, -0.2, offset=(0.5, -0.5))
        rng = np.random.default_rng(5)
        small = rng.uniform(-1, 1, (96, 96))
        large = rng.uniform(-1, 1, (192, 192))
        dt2d_max(small, pen)  # warm the jit cache and allocations
        dt2d_max(large, pen)
        ratios = []
        for _ in range(15):
            t0 = time.perf_counter()
            dt2d_max(small, pen)
            t_small = time.perf_counter() - t0
            t0 = time.perf_counter()
            dt2d_max(large, pen)
            t_large = time.perf_counter() - t0
            ratios.append(t_large / t_small)
        assert float(np.median(ratios)) < 4.5
