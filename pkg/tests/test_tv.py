import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from csvideo.measurement import build_matrix
from csvideo.tv import SolverParams, div2d, grad2d, reconstruct, shrink, tv_norm

FAST = SolverParams(max_outer=6, max_inner=20, max_refine=4)


def square_image(size=32, side=10, level=100.0):
    img = np.zeros((size, size))
    o = (size - side) // 2
    img[o:o + side, o:o + side] = level
    return img


class TestOperators:
    def test_grad_of_constant_is_zero(self):
        gx, gy = grad2d(np.full(48, 7.0), 8, 6)
        assert not gx.any() and not gy.any()

    def test_grad_values(self):
        x = np.arange(12.0).reshape(3, 4)
        gx, gy = (g.reshape(3, 4) for g in grad2d(x, 4, 3))
        assert np.all(gx[:, :3] == 1) and not gx[:, 3].any()
        assert np.all(gy[:2] == 4) and not gy[2].any()

    def test_adjoint_identity(self, rng):
        for _ in range(100):
            w, h = int(rng.integers(2, 30)), int(rng.integers(2, 30))
            x = rng.normal(size=w * h)
            p, q = rng.normal(size=(h, w)), rng.normal(size=(h, w))
            gx, gy = grad2d(x, w, h)
            lhs = float(gx @ p.ravel() + gy @ q.ravel())
            rhs = -float(x @ div2d(p, q, w, h).ravel())
            assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), 1.0)

    def test_tv_norm(self):
        img = square_image(16, 4, 1.0)
        assert tv_norm(img, 16, 16, isotropic=False) == pytest.approx(16.0)
        assert tv_norm(img, 16, 16) < 16.0


class TestShrink:
    def test_isotropic_example(self):
        sx, sy = shrink(np.array([3.0]), np.array([4.0]), 2.5)
        assert sx[0] == pytest.approx(1.5) and sy[0] == pytest.approx(2.0)

    def test_anisotropic(self):
        sx, sy = shrink(np.array([3.0, -1.0]), np.array([-4.0, 0.5]), 2.0, isotropic=False)
        assert np.allclose(sx, [1.0, 0.0]) and np.allclose(sy, [-2.0, 0.0])

    def test_zero_threshold_is_identity(self, rng):
        gx, gy = rng.normal(size=20), rng.normal(size=20)
        sx, sy = shrink(gx, gy, 0.0)
        assert np.array_equal(sx, gx) and np.array_equal(sy, gy)

    def test_small_vectors_vanish(self):
        sx, sy = shrink(np.array([0.6, 0.0]), np.array([0.8, 0.0]), 1.0)
        assert not sx.any() and not sy.any()

    @given(arrays(np.float64, (2, 2, 6), elements=st.floats(-100, 100)), st.floats(0, 50),
           st.booleans())
    @settings(max_examples=100, deadline=None)
    def test_non_expansive(self, v, t, iso):
        (ax, ay), (bx, by) = v
        sa, sb = shrink(ax, ay, t, iso), shrink(bx, by, t, iso)
        d_out = np.hypot(sa[0] - sb[0], sa[1] - sb[1])
        d_in = np.hypot(ax - bx, ay - by)
        if iso:
            assert np.all(d_out <= d_in + 1e-9)
        else:
            assert np.sum(d_out ** 2) <= np.sum(d_in ** 2) + 1e-9


class TestReconstruct:
    def test_zero_measurements(self):
        A = build_matrix(1, 20, 64)
        r = reconstruct(A, np.zeros(20), 8, 8)
        assert not r.x.any() and r.converged

    def test_square_recovery(self):
        img = square_image()
        A = build_matrix(42, 400, 1024)
        r = reconstruct(A, A.measure(img.ravel()), 32, 32)
        err = np.linalg.norm(r.x - img.ravel()) / np.linalg.norm(img)
        assert err <= 1e-2

    def test_lossless_matches_linear_solve(self, rng):
        x0 = np.cumsum(rng.normal(size=(16, 16)), axis=1) * 5
        A = build_matrix(9, 256, 256)
        y = A.measure(x0.ravel())
        oracle = np.linalg.solve(A.entries, y)
        r = reconstruct(A, y, 16, 16)
        assert np.max(np.abs(r.x - oracle)) <= 1e-3

    def test_objective_monotone_per_stage(self):
        img = square_image()
        A = build_matrix(42, 300, 1024)
        r = reconstruct(A, A.measure(img.ravel()), 32, 32, FAST)
        for stage in r.objective_history:
            diffs = np.diff(stage)
            assert np.all(diffs <= 1e-8 * np.maximum(1.0, np.abs(stage[:-1])))

    def test_residual_trend(self):
        img = square_image()
        A = build_matrix(42, 300, 1024)
        r = reconstruct(A, A.measure(img.ravel()), 32, 32, FAST)
        res = r.stage_residuals
        assert len(res) >= 2 and res[-1] < res[0]

    def test_deterministic(self, rng):
        A = build_matrix(4, 100, 400)
        y = A.measure(rng.normal(size=400))
        a = reconstruct(A, y, 20, 20, FAST)
        b = reconstruct(A, y, 20, 20, FAST)
        assert a.x.tobytes() == b.x.tobytes()

    def test_caps_report_not_converged(self, rng):
        A = build_matrix(4, 100, 400)
        r = reconstruct(A, A.measure(rng.normal(size=400) * 50), 20, 20,
                        SolverParams(max_outer=1, max_inner=1, max_refine=0))
        assert not r.converged and np.all(np.isfinite(r.x))

    def test_scale_invariance(self):
        img = square_image()
        A = build_matrix(42, 400, 1024)
        y = A.measure(img.ravel())
        a = reconstruct(A, y, 32, 32, FAST)
        b = reconstruct(A, 4 * y, 32, 32, FAST)
        assert np.allclose(4 * a.x, b.x, rtol=1e-6, atol=1e-6)

    def test_invalid_inputs(self):
        A = build_matrix(1, 10, 64)
        with pytest.raises(ValueError):
            reconstruct(A, np.zeros(9), 8, 8)
        with pytest.raises(ValueError):
            reconstruct(A, np.zeros(10), 4, 8)
        with pytest.raises(ValueError):
            reconstruct(A, np.full(10, np.inf), 8, 8)
        with pytest.raises(ValueError):
            SolverParams(mu=0)
