"""Total-variation reconstruction from linear measurements.

Solves ``min_x TV(x)  s.t.  A x = y`` approximately by penalized splitting:

    min_{x,w}  sum_i |w_i| + beta/2 |D x - w|^2 + mu/2 |A x - t|^2

where ``D`` is the forward-difference gradient and ``w`` its split copy.
Both couplings carry Lagrange multipliers.  Each stage alternates an exact
shrinkage step in ``w`` with a Barzilai-Borwein gradient step in ``x`` (Armijo backtracking).  Between
stages the multipliers are updated and ``mu`` and ``beta`` double; the
multiplier on ``A x = y`` is what drives the data residual to zero instead of
leaving a penalty bias.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from csvideo.measurement import MeasurementMatrix


@dataclass(frozen=True)
class SolverParams:
    """Final penalty weights, stopping rule and iteration caps.

    ``mu`` and ``beta`` are the values reached at the last continuation stage;
    stage ``k`` of ``max_outer`` uses ``mu / 2**(max_outer - 1 - k)``.  After
    continuation, up to ``max_refine`` further multiplier-update stages run at
    the final weights until a whole stage moves ``x`` by less than ``tol/100``.
    """

    mu: float = 2.0 ** 12
    beta: float = 2.0 ** 8
    tol: float = 1e-4
    max_outer: int = 9
    max_inner: int = 40
    isotropic: bool = True
    max_refine: int = 20

    def __post_init__(self):
        if not (self.mu > 0 and self.beta > 0 and self.tol > 0):
            raise ValueError("mu, beta and tol must be positive")
        if self.max_outer < 1 or self.max_inner < 1 or self.max_refine < 0:
            raise ValueError("iteration caps must be >= 1 (max_refine >= 0)")

    def stage_weights(self) -> list[tuple[float, float]]:
        k = self.max_outer
        return [(self.mu / 2.0 ** (k - 1 - s), self.beta / 2.0 ** (k - 1 - s)) for s in range(k)]


@dataclass
class ReconResult:
    x: np.ndarray
    iterations: int
    final_residual_norm: float
    converged: bool
    # augmented Lagrangian after each inner iteration, one list per stage
    objective_history: list[list[float]] = field(default_factory=list, repr=False)
    # |Ax - y| at the end of each stage
    stage_residuals: list[float] = field(default_factory=list, repr=False)


def _as_image(v, width, height, name="x"):
    v = np.asarray(v, dtype=np.float64)
    if v.size != width * height:
        raise ValueError(f"{name} has {v.size} samples, expected {width}x{height}={width * height}")
    return v.reshape(height, width)


def grad2d(x, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Forward differences (horizontal, vertical); zero on the last column/row."""
    img = _as_image(x, width, height)
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, :-1] = img[:, 1:] - img[:, :-1]
    gy[:-1, :] = img[1:, :] - img[:-1, :]
    return gx.ravel(), gy.ravel()


def div2d(p, q, width: int, height: int) -> np.ndarray:
    """Discrete divergence, the negative adjoint of :func:`grad2d`."""
    p = _as_image(p, width, height, "p")
    q = _as_image(q, width, height, "q")
    d = np.zeros((height, width))
    d[:, 0] = p[:, 0]
    d[:, 1:-1] = p[:, 1:-1] - p[:, :-2]
    d[:, -1] = -p[:, -2]
    d[0, :] += q[0, :]
    d[1:-1, :] += q[1:-1, :] - q[:-2, :]
    d[-1, :] -= q[-2, :]
    return d.ravel()


def shrink(gx, gy, t: float, isotropic: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel soft thresholding of a gradient field."""
    if t < 0:
        raise ValueError("threshold must be non-negative")
    gx = np.asarray(gx, dtype=np.float64)
    gy = np.asarray(gy, dtype=np.float64)
    if isotropic:
        norm = np.hypot(gx, gy)
        with np.errstate(divide="ignore", invalid="ignore"):
            factor = np.where(norm > 0, np.maximum(norm - t, 0.0) / norm, 0.0)
        return gx * factor, gy * factor
    return (np.sign(gx) * np.maximum(np.abs(gx) - t, 0.0),
            np.sign(gy) * np.maximum(np.abs(gy) - t, 0.0))


def tv_norm(x, width: int, height: int, isotropic: bool = True) -> float:
    gx, gy = grad2d(x, width, height)
    if isotropic:
        return float(np.sum(np.hypot(gx, gy)))
    return float(np.sum(np.abs(gx)) + np.sum(np.abs(gy)))


class _Split:
    """Augmented Lagrangian of one continuation stage, multipliers held fixed."""

    def __init__(self, width, height, beta, mu, isotropic, lam_x, lam_y):
        self.width, self.height = width, height
        self.beta, self.mu = beta, mu
        self.isotropic = isotropic
        self.lam_x, self.lam_y = lam_x, lam_y

    def evaluate(self, x, r):
        """Objective value after the exact ``w`` update.

        Returns the value, the coupling residuals ``Dx - lam/beta - w`` and
        the shrunk field ``w``.
        """
        gx, gy = grad2d(x, self.width, self.height)
        vx = gx - self.lam_x / self.beta
        vy = gy - self.lam_y / self.beta
        wx, wy = shrink(vx, vy, 1.0 / self.beta, self.isotropic)
        if self.isotropic:
            tv = np.sum(np.hypot(wx, wy))
        else:
            tv = np.sum(np.abs(wx)) + np.sum(np.abs(wy))
        ex, ey = vx - wx, vy - wy
        f = tv + 0.5 * self.beta * (ex @ ex + ey @ ey) + 0.5 * self.mu * (r @ r)
        return float(f), (ex, ey), (gx - wx, gy - wy)

    def gradient(self, e, A, r):
        return -self.beta * div2d(e[0], e[1], self.width, self.height) + self.mu * A.adjoint_fast(r)


def reconstruct(A: MeasurementMatrix, y, width: int, height: int,
                params: SolverParams | None = None) -> ReconResult:
    """Recover an image from ``y = A x`` by TV minimization.

    Starts from ``A^T y``.  Deterministic for fixed inputs; hitting the
    iteration caps returns the current iterate with ``converged=False``.
    """
    params = params or SolverParams()
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (A.m,):
        raise ValueError(f"y has length {y.size}, expected m={A.m}")
    if width * height != A.n:
        raise ValueError(f"{width}x{height} does not match n={A.n}")
    if not np.all(np.isfinite(y)):
        raise ValueError("measurements must be finite")

    peak = float(np.max(np.abs(y))) if y.size else 0.0
    if peak == 0.0:
        return ReconResult(np.zeros(A.n), 0, 0.0, True, [], [])

    # work on a unit-peak problem so the default weights are scale free
    b = y / peak
    state = _State(x=A.adjoint(b), multiplier=np.zeros(A.m),
                   lam_x=np.zeros(A.n), lam_y=np.zeros(A.n))
    rel = math.inf
    history: list[list[float]] = []
    stage_res: list[float] = []

    weights = params.stage_weights()
    final = weights[-1]
    stage = 0
    while True:
        if stage < len(weights):
            mu, beta = weights[stage]
        elif stage < len(weights) + params.max_refine:
            mu, beta = final
        else:
            break
        x_start = state.x
        rel, stage_hist = _run_stage(A, b, width, height, mu, beta, params, state)
        history.append(stage_hist)
        stage_res.append(float(np.linalg.norm(state.Ax - b)) * peak)
        stage += 1
        if stage >= len(weights):
            moved = np.linalg.norm(state.x - x_start) / max(np.linalg.norm(state.x), 1e-12)
            if moved <= params.tol * 1e-2:
                break

    x = state.x * peak
    return ReconResult(
        x=x,
        iterations=state.iterations,
        final_residual_norm=float(np.linalg.norm(A.measure(x) - y)),
        converged=bool(rel <= params.tol),
        objective_history=history,
        stage_residuals=stage_res,
    )


@dataclass
class _State:
    x: np.ndarray
    multiplier: np.ndarray
    lam_x: np.ndarray
    lam_y: np.ndarray
    Ax: np.ndarray | None = None
    iterations: int = 0


def _run_stage(A, b, width, height, mu, beta, params, st):
    """Inner alternating minimization at fixed weights, then multiplier update."""
    split = _Split(width, height, beta, mu, params.isotropic, st.lam_x, st.lam_y)
    target = b + st.multiplier / mu
    # refresh in double precision; inner updates of Ax are incremental
    x, Ax = st.x, A.measure(st.x)
    r = Ax - target
    f, e, gap = split.evaluate(x, r)
    g = split.gradient(e, A, r)
    hist = [f]
    x_prev = g_prev = None
    rel = math.inf
    for _ in range(params.max_inner):
        gg = g @ g
        if gg == 0.0:
            rel = 0.0
            break
        Ag = A.measure_fast(g)
        if x_prev is None:
            # exact minimizer along -g of the quadratic model
            gx, gy = grad2d(g, width, height)
            curv = beta * (gx @ gx + gy @ gy) + mu * (Ag @ Ag)
            step = gg / curv if curv > 0 else 1.0
        else:
            s = x - x_prev
            dg = g - g_prev
            sy = s @ dg
            step = (s @ s) / sy if sy > 0 else 1.0 / (8 * beta + mu)
        accepted = False
        for _bt in range(30):
            x_new = x - step * g
            Ax_new = Ax - step * Ag
            r_new = Ax_new - target
            f_new, e_new, gap_new = split.evaluate(x_new, r_new)
            if f_new <= f - 1e-4 * step * gg:
                accepted = True
                break
            step *= 0.5
        st.iterations += 1
        if not accepted:
            # no representable descent left along -g
            rel = 0.0
            break
        rel = np.linalg.norm(x_new - x) / max(np.linalg.norm(x_new), 1e-12)
        x_prev, g_prev = x, g
        x, Ax, f, gap = x_new, Ax_new, f_new, gap_new
        g = split.gradient(e_new, A, r_new)
        hist.append(f)
        if rel <= params.tol:
            break
    st.x, st.Ax = x, Ax
    st.multiplier = st.multiplier + mu * (b - Ax)
    st.lam_x = st.lam_x - beta * gap[0]
    st.lam_y = st.lam_y - beta * gap[1]
    return rel, hist
