import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from csvideo.measurement import (build_matrix, clear_cache, dequantize, gaussian_stream, gop_seed,
                                 quantize, rows_for_ratio)

QCIF_N = 176 * 144


class TestRows:
    def test_qcif_ratio_50(self):
        assert rows_for_ratio(QCIF_N, 50) == 507

    @pytest.mark.parametrize("cr, m", [(40, 634), (60, 422), (80, 317), (1, QCIF_N)])
    def test_table_ratios(self, cr, m):
        assert rows_for_ratio(QCIF_N, cr) == math.floor(QCIF_N / cr + 0.5) == m

    def test_bad_ratio(self):
        with pytest.raises(ValueError):
            rows_for_ratio(100, 0.5)


class TestMatrix:
    def test_qcif_rebuild_is_identical(self):
        clear_cache()
        a = build_matrix(42, 507, QCIF_N)
        clear_cache()
        b = build_matrix(42, 507, QCIF_N)
        assert a is not b
        assert a.entries.tobytes() == b.entries.tobytes()
        assert a.entries.shape == (507, QCIF_N)

    def test_column_means_and_variance(self):
        A = build_matrix(42, 507, QCIF_N)
        means = A.entries.mean(axis=0)
        assert np.all(np.abs(means) <= 4 / math.sqrt(507))
        assert abs(A.entries.var() * 507 - 1.0) < 0.01

    def test_seeds_differ(self):
        a = build_matrix(1, 20, 100)
        b = build_matrix(2, 20, 100)
        assert not np.array_equal(a.entries, b.entries)

    def test_stream_is_gaussian(self):
        z = gaussian_stream(7, 200_000)
        assert abs(z.mean()) < 0.01
        assert abs(z.std() - 1) < 0.01
        assert np.array_equal(z[:999], gaussian_stream(7, 999))

    def test_basis_vectors(self, rng):
        A = build_matrix(3, 30, 200)
        for j in rng.integers(0, 200, 5):
            e = np.zeros(200)
            e[j] = 1
            assert np.array_equal(A.measure(e), A.column(j))
        for i in rng.integers(0, 30, 5):
            e = np.zeros(30)
            e[i] = 1
            assert np.array_equal(A.adjoint(e), A.entries[i])

    def test_adjoint_identity(self, rng):
        for _ in range(100):
            m, n = int(rng.integers(1, 40)), int(rng.integers(40, 120))
            A = build_matrix(int(rng.integers(0, 2 ** 32)), m, n)
            x, v = rng.normal(size=n), rng.normal(size=m)
            lhs, rhs = A.measure(x) @ v, x @ A.adjoint(v)
            assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), 1e-300) + 1e-12

    def test_lossless_is_orthonormal(self):
        A = build_matrix(42, 64, 64)
        assert A.lossless
        assert np.allclose(A.entries @ A.entries.T, np.eye(64), atol=1e-12)

    def test_fast_path_close(self, rng):
        A = build_matrix(5, 50, 300)
        x = rng.normal(size=300)
        assert np.allclose(A.measure_fast(x), A.measure(x), rtol=1e-5, atol=1e-5)

    def test_invalid(self):
        with pytest.raises(ValueError):
            build_matrix(1, 10, 5)
        with pytest.raises(ValueError):
            build_matrix(-1, 2, 5)
        with pytest.raises(ValueError, match="length"):
            build_matrix(1, 2, 5).measure(np.zeros(4))

    def test_gop_seed(self):
        assert gop_seed(42, 0) == 42
        assert gop_seed(42, 3) == 41


class TestQuantize:
    def test_zero_input(self):
        q = quantize(np.zeros(10))
        assert q.scale == 1.0
        assert not q.codes.any()

    @given(arrays(np.float64, st.integers(1, 64),
                  elements=st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)))
    @settings(max_examples=100, deadline=None)
    def test_error_bound(self, y):
        q = quantize(y)
        assert q.codes.dtype == np.int16
        assert np.all(np.abs(q.codes.astype(int)) <= 32767)
        assert np.all(np.abs(dequantize(q) - y) <= q.scale / 2 * (1 + 1e-9))

    def test_scale_is_float32(self, rng):
        q = quantize(rng.normal(size=50) * 1000)
        assert float(np.float32(q.scale)) == q.scale

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            quantize(np.array([1.0, np.nan]))
