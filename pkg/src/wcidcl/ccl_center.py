"""
Centralized cooperative localization and the no-cooperation baseline.

The center stacks all agents' error states into one joint EKF, so the
cross-correlations created by inter-agent ranges are tracked exactly. Agent
ids are 1-based; agent ``k`` owns block ``k - 1`` of the joint state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .ci_fusion import spd_solve, symmetrize
from .dcl_agent import AgentFilter, apply_feedback, independent_update, predict_block
from .ins import N_ERR, ImuNoiseModel, NominalState, transition_samples
from .ranging import (
    DegenerateGeometry,
    MIN_SEPARATION,
    RangeKind,
    RangeMeasurement,
    RangeObservationBatch,
)


@dataclass
class JointFilter:
    x_hat: list[NominalState]
    P: NDArray[np.float64]
    lever: NDArray[np.float64]
    noise: ImuNoiseModel = field(default_factory=ImuNoiseModel)
    last_imu: list[tuple[NDArray, NDArray] | None] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.x_hat)
        self.P = np.array(self.P, dtype=float)
        if self.P.shape != (N_ERR * n, N_ERR * n):
            raise ValueError(f"joint covariance must be {N_ERR * n} square, got {self.P.shape}")
        self.lever = np.asarray(self.lever, dtype=float)
        if not self.last_imu:
            self.last_imu = [None] * n

    @property
    def n_agents(self) -> int:
        return len(self.x_hat)

    def block(self, i: int, j: int | None = None) -> NDArray[np.float64]:
        """Covariance block of agents ``i`` and ``j`` (1-based)."""
        j = i if j is None else j
        return self.P[N_ERR * (i - 1) : N_ERR * i, N_ERR * (j - 1) : N_ERR * j]

    @classmethod
    def from_filters(cls, x_hat: Sequence[NominalState], P_blocks: Sequence[ArrayLike], lever, noise=None):
        n = len(x_hat)
        P = np.zeros((N_ERR * n, N_ERR * n))
        for k, Pk in enumerate(P_blocks):
            P[N_ERR * k : N_ERR * (k + 1), N_ERR * k : N_ERR * (k + 1)] = Pk
        return cls([x.copy() for x in x_hat], P, lever, noise or ImuNoiseModel())


def joint_predict(
    jf: JointFilter,
    imu: Sequence[tuple[NDArray, NDArray] | None],
    dt: NDArray[np.float64],
    missing: str = "hold",
) -> JointFilter:
    """
    Predict all agents through one block of IMU samples.

    ``imu[k]`` holds the ``(f_b, w_b)`` arrays of agent ``k + 1`` or ``None``
    when its data never reached the center. Such an agent is predicted by
    holding its last received sample (``missing="hold"``) or as hovering
    (``missing="hover"``).
    """
    if missing not in ("hold", "hover"):
        raise ValueError(f"missing IMU policy must be 'hold' or 'hover', got {missing!r}")
    n = jf.n_agents
    Phis = np.empty((n, N_ERR, N_ERR))
    Qs = np.empty((n, N_ERR, N_ERR))
    xs, last = [], list(jf.last_imu)
    for k in range(n):
        if imu[k] is not None:
            f_b, w_b = imu[k]
            last[k] = (np.array(f_b[-1]), np.array(w_b[-1]))
        elif missing == "hold" and last[k] is not None:
            f_b = np.repeat(last[k][0][None, :], len(dt), axis=0)
            w_b = np.repeat(last[k][1][None, :], len(dt), axis=0)
        else:
            # hover policy, or nothing received yet
            f_b = np.tile([0.0, 0.0, jf.noise.gravity], (len(dt), 1))
            w_b = np.zeros((len(dt), 3))
        x, Phis[k], Qs[k] = transition_samples(jf.x_hat[k], f_b, w_b, dt, jf.noise)
        xs.append(x)

    # P_ij <- Phi_i P_ij Phi_j^T, plus Q_i on the diagonal
    blocks = jf.P.reshape(n, N_ERR, n, N_ERR).transpose(0, 2, 1, 3)
    blocks = Phis[:, None] @ blocks @ Phis[None, :].transpose(0, 1, 3, 2)
    idx = np.arange(n)
    blocks[idx, idx] += Qs
    P = blocks.transpose(0, 2, 1, 3).reshape(n * N_ERR, n * N_ERR)
    return JointFilter(xs, symmetrize(P), jf.lever, jf.noise, last)


def _module_geometry(jf: JointFilter):
    C = np.array([x.C for x in jf.x_hat])
    a = C @ jf.lever
    pR = np.array([x.p for x in jf.x_hat]) + a
    return pR, a


def build_joint_batch(
    jf: JointFilter,
    anchors: Mapping[int, ArrayLike] | Sequence[ArrayLike],
    measurements: Sequence[RangeMeasurement],
) -> RangeObservationBatch:
    """
    Joint observation rows. Inter-agent rows touch both agents' blocks with
    opposite-signed position and lever-arm attitude entries.
    """
    m = len(measurements)
    if m == 0:
        return RangeObservationBatch(np.zeros(0), np.zeros((0, jf.P.shape[0])), np.zeros((0, 0)))
    pR, a = _module_geometry(jf)
    src = np.array([meas.source_id - 1 for meas in measurements])
    is_agent = np.array([meas.kind is RangeKind.AGENT for meas in measurements])
    tgt = np.array([meas.target_id - 1 if meas.kind is RangeKind.AGENT else 0 for meas in measurements])
    other = np.array(
        [pR[meas.target_id - 1] if meas.kind is RangeKind.AGENT else anchors[meas.target_id] for meas in measurements],
        dtype=float,
    )
    diff = pR[src] - other
    d_hat = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if np.any(d_hat < MIN_SEPARATION):
        raise DegenerateGeometry(f"ranging modules only {d_hat.min():.3g} m apart")
    r = diff / d_hat[:, None]

    H = np.zeros((m, jf.P.shape[0]))
    rows = np.arange(m)
    for c in range(3):
        H[rows, N_ERR * src + c] = r[:, c]
    att_i = np.cross(r, a[src])
    for c in range(3):
        H[rows, N_ERR * src + 6 + c] = att_i[:, c]
    ag = rows[is_agent]
    if ag.size:
        att_j = np.cross(r[ag], a[tgt[ag]])
        for c in range(3):
            H[ag, N_ERR * tgt[ag] + c] = -r[ag, c]
            H[ag, N_ERR * tgt[ag] + 6 + c] = -att_j[:, c]

    d_tilde = np.array([meas.d_tilde for meas in measurements])
    R = np.diag([meas.sigma_r**2 for meas in measurements])
    return RangeObservationBatch(d_hat - d_tilde, H, R)


def _ekf(jf: JointFilter, batch: RangeObservationBatch) -> JointFilter:
    PHt = jf.P @ batch.H.T
    K = spd_solve(batch.H @ PHt + batch.R, PHt.T).T
    dx = (K @ batch.z).reshape(jf.n_agents, N_ERR)
    P = symmetrize(jf.P - K @ PHt.T)
    xs = [apply_feedback(x, d) for x, d in zip(jf.x_hat, dx)]
    return JointFilter(xs, P, jf.lever, jf.noise, jf.last_imu)


def joint_update(
    jf: JointFilter,
    anchors: Mapping[int, ArrayLike] | Sequence[ArrayLike],
    measurements: Sequence[RangeMeasurement],
    sequential: bool = False,
) -> JointFilter:
    """
    Joint EKF update with anchor and inter-agent ranges.

    In sequential mode each range is processed on its own, relinearized at
    the latest estimate.
    """
    if not measurements:
        return jf
    if not sequential:
        return _ekf(jf, build_joint_batch(jf, anchors, measurements))
    for meas in measurements:
        jf = _ekf(jf, build_joint_batch(jf, anchors, [meas]))
    return jf


def ncl_step(
    filters: Sequence[AgentFilter],
    imu: Sequence[tuple[NDArray, NDArray]],
    dt: NDArray[np.float64],
    anchor_batches: Sequence[RangeObservationBatch],
) -> list[AgentFilter]:
    """No-cooperation epoch: every agent predicts and uses its anchors only."""
    out = []
    for f, (f_b, w_b), batch in zip(filters, imu, anchor_batches):
        out.append(independent_update(predict_block(f, f_b, w_b, dt), batch))
    return out
