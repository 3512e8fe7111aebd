"""
Per-agent distributed filter.

Every agent runs its own error-state filter: IMU prediction, an EKF update
with anchor ranges (independent of the agent state), then a CI-family update
with inter-agent ranges whose noise contains the neighbours' unknown,
correlated estimation errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .attitude import correct_attitude
from .ci_fusion import (
    OMEGA_MAX,
    Determinant,
    KFStyleCIProblem,
    Trace,
    WeightedTrace,
    spd_solve,
    symmetrize,
)
from .ins import (
    ATT,
    BA,
    BG,
    N_ERR,
    POS,
    VEL,
    ImuNoiseModel,
    ImuSample,
    NominalState,
    ins_error_sensitivity,
    predict_samples,
    wci_weight_matrix,
)
from .ranging import NeighborInfo, RangeMeasurement, RangeObservationBatch, build_agent_batch


class FusionMethod(Enum):
    CI_TRACE = "ci-trace"
    CI_DET = "ci-det"
    WCI = "wci"
    NO_COOPERATION = "ncl"


@dataclass
class AgentFilter:
    id: int
    x_hat: NominalState
    P: NDArray[np.float64]
    lever: NDArray[np.float64]
    method: FusionMethod
    T_a: float = 5.0
    noise: ImuNoiseModel = field(default_factory=ImuNoiseModel)
    last_f: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    skipped_updates: int = 0
    last_omega: float = float("nan")

    def __post_init__(self):
        if self.T_a < 0:
            raise ValueError("T_a must be non-negative")
        self.P = np.array(self.P, dtype=float)
        self.lever = np.asarray(self.lever, dtype=float)


def apply_feedback(x: NominalState, dx: ArrayLike) -> NominalState:
    """Fold an estimated error state back into the nominal state."""
    dx = np.asarray(dx, dtype=float)
    return NominalState(
        x.p - dx[POS],
        x.v - dx[VEL],
        correct_attitude(x.q, dx[ATT]),
        x.bg + dx[BG],
        x.ba + dx[BA],
    )


def predict(f: AgentFilter, imu: ImuSample) -> AgentFilter:
    return predict_block(f, imu.f_b[None, :], imu.w_b[None, :], np.array([imu.dt]))


def predict_block(f: AgentFilter, f_b: NDArray, w_b: NDArray, dt: NDArray) -> AgentFilter:
    """Predict through consecutive IMU samples (rows of ``f_b``, ``w_b``)."""
    if len(dt) == 0:
        return f
    x, P = predict_samples(f.x_hat, f.P, f_b, w_b, dt, f.noise)
    return replace(f, x_hat=x, P=P, last_f=np.array(f_b[-1], dtype=float))


def ekf_update(
    x: NominalState, P: NDArray[np.float64], batch: RangeObservationBatch
) -> tuple[NominalState, NDArray[np.float64]]:
    PHt = P @ batch.H.T
    K = spd_solve(batch.H @ PHt + batch.R, PHt.T).T
    dx = K @ batch.z
    P_new = symmetrize((np.eye(N_ERR) - K @ batch.H) @ P)
    return apply_feedback(x, dx), P_new


def independent_update(f: AgentFilter, batch: RangeObservationBatch) -> AgentFilter:
    """EKF update with anchor ranges; the error state is fed back immediately."""
    if batch.size == 0:
        return f
    x, P = ekf_update(f.x_hat, f.P, batch)
    return replace(f, x_hat=x, P=P)


def weighting_factor(f: AgentFilter) -> NDArray[np.float64]:
    """
    ``S`` with ``W = S^T S``: sensitivity of the position error after ``T_a``
    seconds of dead reckoning, built from the raw measured specific force.
    """
    return ins_error_sensitivity(f.x_hat.C, f.last_f, f.T_a)


def weighting_matrix(f: AgentFilter) -> NDArray[np.float64]:
    return wci_weight_matrix(weighting_factor(f))


def correlated_update(f: AgentFilter, batch: RangeObservationBatch) -> AgentFilter:
    """
    CI update with inter-agent ranges.

    The weight minimizes the trace (CI-trace), the determinant (CI-det) or
    ``tr(W P)`` with the INS-error weighting matrix (WCI) of the updated
    covariance. A weight at the upper end of the search interval means the
    update is worthless; it is skipped and counted.
    """
    if batch.size == 0 or f.method is FusionMethod.NO_COOPERATION:
        return f
    problem = KFStyleCIProblem(f.P, batch.H, batch.R, batch.z)
    if f.method is FusionMethod.CI_TRACE:
        omega = problem.optimal_weight(Trace())
    elif f.method is FusionMethod.CI_DET:
        omega = problem.optimal_weight(Determinant())
    else:
        S = weighting_factor(f)
        omega = problem.optimal_weight(WeightedTrace(wci_weight_matrix(S)), M=S)

    if omega >= OMEGA_MAX:
        return replace(f, skipped_updates=f.skipped_updates + 1, last_omega=omega)
    dx, P = problem.update(omega)
    return replace(f, x_hat=apply_feedback(f.x_hat, dx), P=P, last_omega=omega)


def sequential_correlated_update(
    f: AgentFilter, infos: dict[int, NeighborInfo], measurements: list[RangeMeasurement]
) -> AgentFilter:
    """One CI update per inter-agent range, in arrival order, relinearizing each time."""
    for m in measurements:
        f = correlated_update(f, build_agent_batch(f.x_hat, f.lever, infos, [m]))
    return f


def make_broadcast(f: AgentFilter) -> NeighborInfo:
    d = np.diag(f.P)
    return NeighborInfo(f.id, f.x_hat.p.copy(), f.x_hat.q.copy(), d[POS].copy(), d[ATT].copy())
