"""
Covariance intersection (CI) in full, partial-observation and KF-style forms,
the cost criteria used to pick the weight, the weight optimizer, and the
actual-covariance analyzer used to study consistency and correlation mismatch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import cho_factor, cho_solve, solve_triangular

OMEGA_MIN = 1e-6
OMEGA_MAX = 1.0 - 1e-6
COND_LIMIT = 1e12
GRID_POINTS = 101
GOLDEN_TOL = 1e-5


class SingularCovariance(np.linalg.LinAlgError):
    """A covariance or innovation matrix could not be inverted reliably."""


@dataclass(frozen=True)
class GaussianEstimate:
    mean: NDArray[np.float64]
    cov: NDArray[np.float64]

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=float)))
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError(f"covariance shape {self.cov.shape} does not match mean size {self.mean.size}")


@dataclass(frozen=True)
class Trace:
    pass


@dataclass(frozen=True)
class Determinant:
    pass


@dataclass(frozen=True)
class WeightedTrace:
    W: NDArray[np.float64]


CostCriterion = Union[Trace, Determinant, WeightedTrace]


def _cholesky(A: NDArray[np.float64]):
    try:
        c, low = cho_factor(A, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularCovariance(str(exc)) from exc
    d = np.abs(np.diag(c))
    # cond(A) >= (max L_ii / min L_ii)^2, a cheap lower bound
    if d.min() == 0.0 or (d.max() / d.min()) ** 2 > COND_LIMIT:
        raise SingularCovariance("matrix is numerically singular (condition number > 1e12)")
    return c, low


def spd_solve(A: ArrayLike, B: ArrayLike) -> NDArray[np.float64]:
    """Solve ``A X = B`` for symmetric positive-definite ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return cho_solve(_cholesky(A), np.asarray(B, dtype=float))


def spd_inverse(A: ArrayLike) -> NDArray[np.float64]:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    inv = spd_solve(A, np.eye(A.shape[0]))
    return 0.5 * (inv + inv.T)


def symmetrize(P: ArrayLike) -> NDArray[np.float64]:
    P = np.asarray(P, dtype=float)
    return 0.5 * (P + P.T)


def ci_fuse(e1: GaussianEstimate, e2: GaussianEstimate, w: float) -> GaussianEstimate:
    """
    Fuse two estimates of the same state with weight ``w`` on the first.

    ``w == 1`` and ``w == 0`` return the corresponding input unchanged, without
    inverting the other covariance.
    """
    _check_weight(w)
    if e1.mean.shape != e2.mean.shape:
        raise ValueError("estimates must have the same dimension")
    if w == 1.0:
        return e1
    if w == 0.0:
        return e2
    I1 = spd_inverse(e1.cov)
    I2 = spd_inverse(e2.cov)
    P = spd_inverse(w * I1 + (1.0 - w) * I2)
    mean = P @ (w * I1 @ e1.mean + (1.0 - w) * I2 @ e2.mean)
    return GaussianEstimate(mean, P)


def ci_fuse_partial(e1: GaussianEstimate, H: ArrayLike, e2: GaussianEstimate, w: float) -> GaussianEstimate:
    """CI of a full estimate ``e1`` with a partial observation ``e2`` of ``H x``."""
    _check_weight(w)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if w == 1.0:
        return e1
    I1 = spd_inverse(e1.cov)
    I2 = spd_inverse(e2.cov)
    P = spd_inverse(w * I1 + (1.0 - w) * H.T @ I2 @ H)
    mean = P @ (w * I1 @ e1.mean + (1.0 - w) * H.T @ I2 @ e2.mean)
    return GaussianEstimate(mean, P)


def kf_style_ci_update(
    P_prior: ArrayLike, H: ArrayLike, R_nom: ArrayLike, z: ArrayLike, w: float
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Kalman-form CI update for a partial observation.

    The prior is inflated to ``P / w`` and the measurement noise to
    ``R / (1 - w)``; the rest is a standard Kalman update. Requires
    ``0 < w < 1``.

    Returns
    -------
    dx : ndarray
        Estimated error state.
    P_post : ndarray
        Updated (symmetrized) nominal covariance.
    """
    if not 0.0 < w < 1.0:
        raise ValueError(f"KF-style CI needs 0 < w < 1, got {w}")
    P_prior = np.asarray(P_prior, dtype=float)
    H = np.atleast_2d(np.asarray(H, dtype=float))
    R_nom = np.atleast_2d(np.asarray(R_nom, dtype=float))
    P1 = P_prior / w
    P2 = R_nom / (1.0 - w)
    PHt = P1 @ H.T
    K = spd_solve(H @ PHt + P2, PHt.T).T
    dx = K @ np.asarray(z, dtype=float)
    P_post = (np.eye(P_prior.shape[0]) - K @ H) @ P1
    return dx, symmetrize(P_post)


def evaluate_cost(c: CostCriterion, P: ArrayLike) -> float:
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if isinstance(c, Trace):
        return float(np.trace(P))
    if isinstance(c, Determinant):
        return float(np.linalg.det(P))
    if isinstance(c, WeightedTrace):
        return float(np.sum(np.asarray(c.W) * P.T))
    raise TypeError(f"unknown cost criterion {c!r}")


def _criterion_objective(c: CostCriterion, P: NDArray[np.float64]) -> float:
    # log-determinant has the same minimizer and does not underflow
    if isinstance(c, Determinant):
        sign, logdet = np.linalg.slogdet(P)
        return logdet if sign > 0 else np.inf
    return evaluate_cost(c, P)


def minimize_weight(
    objective: Callable[[NDArray[np.float64]], NDArray[np.float64]] | Callable[[float], float],
    vectorized: bool = False,
    lo: float = OMEGA_MIN,
    hi: float = OMEGA_MAX,
) -> float:
    """
    Minimize a scalar function of the CI weight over ``[lo, hi]``.

    A 101-point grid brackets the global minimum, then golden-section search
    refines it to 1e-5. Ties go to the larger weight. Grid points with a
    non-finite cost are ignored; if every point is non-finite ``hi`` is
    returned.
    """
    grid = np.linspace(lo, hi, GRID_POINTS)
    if vectorized:
        costs = np.asarray(objective(grid), dtype=float)
    else:
        costs = np.array([_safe_call(objective, w) for w in grid])
    costs = np.where(np.isfinite(costs), costs, np.inf)
    if not np.isfinite(costs).any():
        return hi
    best = np.flatnonzero(costs == costs.min())[-1]

    def f(w):
        if vectorized:
            return float(objective(np.array([w]))[0])
        return _safe_call(objective, w)

    a = grid[max(best - 1, 0)]
    b = grid[min(best + 1, GRID_POINTS - 1)]
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > GOLDEN_TOL:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)

    candidates = [(costs[best], grid[best]), (fc, c), (fd, d)]
    best_cost = min(cost for cost, _ in candidates)
    return max(w for cost, w in candidates if cost == best_cost)


def _safe_call(objective, w) -> float:
    try:
        val = float(objective(w))
    except (SingularCovariance, np.linalg.LinAlgError, FloatingPointError, ZeroDivisionError):
        return np.inf
    return val if np.isfinite(val) else np.inf


def optimize_omega(cost: CostCriterion, fuse: Callable[[float], NDArray[np.float64]]) -> float:
    """
    Weight minimizing ``cost`` of the fused covariance ``fuse(w)``.

    The search domain is ``[1e-6, 1 - 1e-6]``; see ``minimize_weight``.
    """
    return minimize_weight(lambda w: _criterion_objective(cost, fuse(w)))


def actual_fused_covariance(
    P1_star: ArrayLike,
    P2_star: ArrayLike,
    P12_star: ArrayLike,
    P1: ArrayLike,
    P2: ArrayLike,
    w: float,
    H: ArrayLike | None = None,
) -> NDArray[np.float64]:
    """
    True error covariance of the CI estimate given the actual input
    covariances ``P1_star``, ``P2_star`` and cross-covariance ``P12_star``.

    The gains use the nominal ``P1``, ``P2``. With ``H`` given, the second
    source observes ``H x`` (partial form) and ``P12_star`` is n x m.
    """
    _check_weight(w)
    P1 = np.atleast_2d(np.asarray(P1, dtype=float))
    P2 = np.atleast_2d(np.asarray(P2, dtype=float))
    H = np.eye(P1.shape[0]) if H is None else np.atleast_2d(np.asarray(H, dtype=float))
    P1s = np.atleast_2d(np.asarray(P1_star, dtype=float))
    P2s = np.atleast_2d(np.asarray(P2_star, dtype=float))
    P12s = np.atleast_2d(np.asarray(P12_star, dtype=float))

    I1 = spd_inverse(P1)
    I2 = spd_inverse(P2)
    P = spd_inverse(w * I1 + (1.0 - w) * H.T @ I2 @ H)
    # fused error = P (A1 e1 + A2 e2)
    A1 = w * I1
    A2 = (1.0 - w) * H.T @ I2
    inner = A1 @ P1s @ A1.T + A1 @ P12s @ A2.T + A2 @ P12s.T @ A1.T + A2 @ P2s @ A2.T
    return symmetrize(P @ inner @ P)


def correlation_coefficient(P: ArrayLike, i: int = 0, j: int = 1) -> float:
    P = np.asarray(P, dtype=float)
    return float(P[i, j] / np.sqrt(P[i, i] * P[j, j]))


def _check_weight(w: float) -> None:
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"CI weight must lie in [0, 1], got {w}")


class KFStyleCIProblem:
    """
    One KF-style CI update with the weight still free.

    Whitening the measurement noise and diagonalizing ``H P H^T`` once gives
    closed forms of the trace, weighted trace and log-determinant of
    ``P_post(w)`` that cost O(m) per weight. ``update`` falls back to
    ``kf_style_ci_update`` so the applied correction is computed directly.
    """

    def __init__(self, P: ArrayLike, H: ArrayLike, R: ArrayLike, z: ArrayLike):
        self.P = np.asarray(P, dtype=float)
        self.H = np.atleast_2d(np.asarray(H, dtype=float))
        self.R = np.atleast_2d(np.asarray(R, dtype=float))
        self.z = np.asarray(z, dtype=float)
        n = self.P.shape[0]

        L = np.linalg.cholesky(self.R)
        Hw = solve_triangular(L, self.H, lower=True)
        if Hw.shape[0] > n:
            # H P H^T has rank at most n: diagonalize the n x n Gram matrix of
            # A = Hw S (P = S S^T); row k of B is then sqrt(lam_k) (S v_k)^T
            S = np.linalg.cholesky(self.P)
            A = Hw @ S
            lam, V = np.linalg.eigh(A.T @ A)
            self.lam = np.clip(lam, 0.0, None)
            self.B = np.sqrt(self.lam)[:, None] * (S @ V).T
        else:
            lam, U = np.linalg.eigh(Hw @ self.P @ Hw.T)
            self.lam = np.clip(lam, 0.0, None)
            self.B = U.T @ Hw @ self.P
        sign, self._logdet_P = np.linalg.slogdet(self.P)
        if sign <= 0:
            raise SingularCovariance("prior covariance is not positive definite")
        self._n = n

    def _weighted_terms(self, M):
        if M is None:
            return np.trace(self.P), np.einsum("ij,ij->i", self.B, self.B)
        MB = self.B @ M.T
        return np.sum(M @ self.P * M), np.einsum("ij,ij->i", MB, MB)

    def objective(self, c: CostCriterion, M: NDArray[np.float64] | None = None):
        """
        Vectorized objective over weights for criterion ``c``.

        For ``WeightedTrace`` pass the factor ``M`` with ``W = M^T M`` (for
        instance the INS sensitivity matrix); otherwise it is obtained from
        an eigendecomposition of ``W``.
        """
        if isinstance(c, Determinant):
            lam = self.lam
            n = self._n
            logdet_P = self._logdet_P

            def f(w):
                w = np.atleast_1d(w)
                cc = w / (1.0 - w)
                return -n * np.log(w) + logdet_P + np.sum(
                    np.log(cc[:, None] / (lam[None, :] + cc[:, None])), axis=1
                )

            return f

        if isinstance(c, Trace):
            a0, a = self._weighted_terms(None)
        elif isinstance(c, WeightedTrace):
            if M is None:
                ev, V = np.linalg.eigh(np.asarray(c.W, dtype=float))
                M = (V * np.sqrt(np.clip(ev, 0.0, None))).T
            a0, a = self._weighted_terms(M)
        else:
            raise TypeError(f"unknown cost criterion {c!r}")
        lam = self.lam

        def g(w):
            w = np.atleast_1d(w)
            cc = w / (1.0 - w)
            return (a0 - np.sum(a[None, :] / (lam[None, :] + cc[:, None]), axis=1)) / w

        return g

    def optimal_weight(self, c: CostCriterion, M: NDArray[np.float64] | None = None) -> float:
        return minimize_weight(self.objective(c, M), vectorized=True)

    def update(self, w: float):
        return kf_style_ci_update(self.P, self.H, self.R, self.z, w)
