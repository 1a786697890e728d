"""Seeded Gaussian measurement operator and 16-bit measurement quantizer.

Entry generation is frozen: PCG64 raw 64-bit words (a stream NumPy keeps
stable across releases) are turned into uniforms with 53-bit precision and
then into normals with the Box-Muller transform.  The matrix is a pure
function of ``(seed, m, n)``; only the seed ever travels in a bitstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

CODE_MAX = 32767

_TWO_POW_53 = 2.0 ** -53


def rows_for_ratio(n: int, cr_cs: float) -> int:
    """Measurement count for a sample-count compression ratio ``n / m``.

    Rounds half up so the figure does not depend on float tie-breaking rules.
    """
    if cr_cs < 1:
        raise ValueError(f"cr_cs must be >= 1, got {cr_cs}")
    return max(1, min(n, int(math.floor(n / cr_cs + 0.5))))


def gaussian_stream(seed: int, count: int) -> np.ndarray:
    """``count`` standard normals from the frozen PCG64 + Box-Muller generator."""
    pairs = (count + 1) // 2
    bits = np.random.PCG64(seed).random_raw(2 * pairs)
    # u1 in (0, 1] keeps the log finite; u2 in [0, 1)
    u1 = ((bits[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_POW_53
    u2 = (bits[1::2] >> np.uint64(11)).astype(np.float64) * _TWO_POW_53
    radius = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    out = np.empty(2 * pairs)
    out[0::2] = radius * np.cos(theta)
    out[1::2] = radius * np.sin(theta)
    return out[:count]


@dataclass(frozen=True, eq=False)
class MeasurementMatrix:
    """Dense ``m x n`` operator with entries of variance ``1/m``.

    When ``m == n`` (lossless diagnostic mode) the seeded Gaussian matrix is
    orthonormalized, so the operator is exactly invertible and well conditioned.
    """

    seed: int
    m: int
    n: int
    entries: np.ndarray

    @property
    def lossless(self) -> bool:
        return self.m == self.n

    def measure(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise ValueError(f"signal length {x.size} does not match n={self.n}")
        return self.entries @ x

    def adjoint(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.m,):
            raise ValueError(f"measurement length {v.size} does not match m={self.m}")
        return v @ self.entries

    @cached_property
    def _single(self) -> np.ndarray:
        e = self.entries.astype(np.float32)
        e.setflags(write=False)
        return e

    def measure_fast(self, x) -> np.ndarray:
        """Single-precision ``A x`` for iterative solvers (half the memory traffic)."""
        return (self._single @ np.asarray(x, dtype=np.float32)).astype(np.float64)

    def adjoint_fast(self, v) -> np.ndarray:
        return (np.asarray(v, dtype=np.float32) @ self._single).astype(np.float64)

    def column(self, j: int) -> np.ndarray:
        return self.entries[:, j]

    @property
    def nbytes(self) -> int:
        return self.entries.nbytes


def build_matrix(seed: int, m: int, n: int) -> MeasurementMatrix:
    """Build (or fetch from cache) the measurement matrix for ``(seed, m, n)``."""
    if m < 1 or n < 1:
        raise ValueError(f"matrix dimensions must be positive, got m={m}, n={n}")
    if m > n:
        raise ValueError(f"m={m} exceeds n={n}; only m <= n is supported")
    if not 0 <= seed < 2 ** 64:
        raise ValueError("seed must fit in an unsigned 64-bit integer")
    return _build_cached(int(seed), int(m), int(n))


@lru_cache(maxsize=4)
def _build_cached(seed: int, m: int, n: int) -> MeasurementMatrix:
    g = gaussian_stream(seed, m * n).reshape(m, n)
    if m == n:
        q, r = np.linalg.qr(g)
        # fix the sign ambiguity of QR so the result is unique
        signs = np.where(np.diag(r) < 0, -1.0, 1.0)
        entries = np.ascontiguousarray((q * signs).T)
    else:
        entries = g / math.sqrt(m)
    entries.setflags(write=False)
    return MeasurementMatrix(seed, m, n, entries)


def clear_cache() -> None:
    _build_cached.cache_clear()


def measure(A: MeasurementMatrix, x) -> np.ndarray:
    return A.measure(x)


def adjoint(A: MeasurementMatrix, v) -> np.ndarray:
    return A.adjoint(v)


def gop_seed(seed: int, gop_index: int) -> int:
    """Per-GOP seed derivation (seed XOR GOP index)."""
    return (int(seed) ^ int(gop_index)) & 0xFFFFFFFFFFFFFFFF


@dataclass(frozen=True, eq=False)
class QuantizedMeasurements:
    scale: float
    codes: np.ndarray

    def __post_init__(self):
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError(f"quantizer scale must be positive and finite, got {self.scale}")
        codes = np.array(self.codes, dtype=np.int16, copy=True)
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    @property
    def m(self) -> int:
        return self.codes.size

    def dequantize(self) -> np.ndarray:
        return self.codes.astype(np.float64) * self.scale

    def __eq__(self, other):
        if not isinstance(other, QuantizedMeasurements):
            return NotImplemented
        return self.scale == other.scale and np.array_equal(self.codes, other.codes)


def quantize(y, bits: int = 16) -> QuantizedMeasurements:
    """Uniform symmetric quantizer, ``scale = max|y| / 32767``.

    The scale is rounded to float32 first because that is how it is stored;
    the code range is still guaranteed to fit in int16.
    """
    if bits != 16:
        raise ValueError("only 16-bit measurement codes are supported")
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise ValueError("measurements must be finite")
    peak = float(np.max(np.abs(y))) if y.size else 0.0
    if peak == 0.0:
        return QuantizedMeasurements(1.0, np.zeros(y.shape, dtype=np.int16))
    # tiny peaks would underflow the stored float32 scale
    scale = max(float(np.float32(peak / CODE_MAX)), float(np.finfo(np.float32).tiny))
    if peak / scale > CODE_MAX + 0.5:
        scale = float(np.nextafter(np.float32(scale), np.float32(np.inf)))
    codes = np.clip(np.rint(y / scale), -CODE_MAX, CODE_MAX).astype(np.int16)
    return QuantizedMeasurements(scale, codes)


def dequantize(q: QuantizedMeasurements) -> np.ndarray:
    return q.dequantize()
