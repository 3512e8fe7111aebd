"""
Range geometry with lever arm, differential range observations and their
Jacobians, and the stacked observation batches for anchor and inter-agent
updates.

Differential measurements are ``z = d_hat - d_tilde`` (predicted minus
measured), so ``z ~ H dx + G v`` in the error-state convention of ``ins``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .attitude import quat_to_rotmat
from .ins import N_ERR, NominalState

MIN_SEPARATION = 1e-6


class DegenerateGeometry(ValueError):
    """Two ranging modules are closer than the degenerate-geometry threshold."""


class RangeKind(Enum):
    ANCHOR = "anchor"
    AGENT = "agent"


@dataclass(frozen=True)
class RangeMeasurement:
    kind: RangeKind
    source_id: int
    target_id: int
    d_tilde: float
    sigma_r: float

    def __post_init__(self):
        if self.d_tilde < 0:
            raise ValueError("measured range must be non-negative")
        if not self.sigma_r > 0:
            raise ValueError("range noise sigma must be positive")


_WIRE = struct.Struct("<I3d4d3d3d")


@dataclass(frozen=True)
class NeighborInfo:
    """
    What an agent broadcasts to its neighbours: position and attitude
    estimates with the diagonal position [m^2] and phi-angle [rad^2]
    variances.
    """

    agent_id: int
    position: NDArray[np.float64]
    attitude: NDArray[np.float64]
    pos_var: NDArray[np.float64]
    att_var: NDArray[np.float64]

    WIRE_SIZE = _WIRE.size

    def __post_init__(self):
        for name in ("position", "attitude", "pos_var", "att_var"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @cached_property
    def C(self) -> NDArray[np.float64]:
        return quat_to_rotmat(self.attitude)

    def to_bytes(self) -> bytes:
        return _WIRE.pack(self.agent_id, *self.position, *self.attitude, *self.pos_var, *self.att_var)

    @classmethod
    def from_bytes(cls, payload: bytes) -> NeighborInfo:
        vals = _WIRE.unpack(payload)
        return cls(
            int(vals[0]),
            np.array(vals[1:4]),
            np.array(vals[4:8]),
            np.array(vals[8:11]),
            np.array(vals[11:14]),
        )


@dataclass
class RangeObservationBatch:
    z: NDArray[np.float64]
    H: NDArray[np.float64]
    R: NDArray[np.float64]
    neighbor_ids: tuple[int, ...] = ()

    @property
    def size(self) -> int:
        return self.z.size

    @classmethod
    def empty(cls) -> RangeObservationBatch:
        return cls(np.zeros(0), np.zeros((0, N_ERR)), np.zeros((0, 0)))


def ranging_module_position(p_I: ArrayLike, C_bn: ArrayLike, l_b: ArrayLike) -> NDArray[np.float64]:
    return np.asarray(p_I, dtype=float) + np.asarray(C_bn, dtype=float) @ np.asarray(l_b, dtype=float)


def predict_range_and_direction(pR_i: ArrayLike, pR_other: ArrayLike) -> tuple[float, NDArray[np.float64]]:
    """Predicted distance and the unit vector pointing from ``pR_other`` to ``pR_i``."""
    diff = np.asarray(pR_i, dtype=float) - np.asarray(pR_other, dtype=float)
    d = float(np.sqrt(diff @ diff))
    if d < MIN_SEPARATION:
        raise DegenerateGeometry(f"ranging modules only {d:.3g} m apart")
    return d, diff / d


def anchor_observation_row(
    x_hat: NominalState, l_b: ArrayLike, anchor_pos: ArrayLike
) -> tuple[NDArray[np.float64], float]:
    a = x_hat.C @ np.asarray(l_b, dtype=float)
    d_hat, r = predict_range_and_direction(x_hat.p + a, anchor_pos)
    H = np.zeros(N_ERR)
    H[0:3] = r
    H[6:9] = np.cross(r, a)  # r^T [a x]
    return H, d_hat


def agent_observation_row(
    x_hat_i: NominalState, info_j: NeighborInfo, l_b: ArrayLike
) -> tuple[NDArray[np.float64], NDArray[np.float64], float]:
    """
    Jacobians of the differential range to neighbour ``j`` w.r.t. the own
    error state (``H``) and the noise vector ``[dp_j, phi_j, n_d]`` (``G``).
    """
    l_b = np.asarray(l_b, dtype=float)
    a_i = x_hat_i.C @ l_b
    a_j = info_j.C @ l_b
    d_hat, r = predict_range_and_direction(x_hat_i.p + a_i, info_j.position + a_j)
    H = np.zeros(N_ERR)
    H[0:3] = r
    H[6:9] = np.cross(r, a_i)
    G = np.r_[-r, -np.cross(r, a_j), -1.0]
    return H, G, d_hat


def _unit_rows(pR_i, pR_others):
    diff = pR_i[None, :] - pR_others
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if np.any(d < MIN_SEPARATION):
        raise DegenerateGeometry(f"ranging modules only {d.min():.3g} m apart")
    return d, diff / d[:, None]


def build_anchor_batch(
    x_hat: NominalState,
    l_b: ArrayLike,
    anchors: Mapping[int, ArrayLike] | Sequence[ArrayLike],
    measurements: Sequence[RangeMeasurement],
) -> RangeObservationBatch:
    """Stacked EKF observation for anchor ranges, ``R = sigma_r^2 I``."""
    if not measurements:
        return RangeObservationBatch.empty()
    a = x_hat.C @ np.asarray(l_b, dtype=float)
    pos = np.array([anchors[m.target_id] for m in measurements], dtype=float)
    d_hat, r = _unit_rows(x_hat.p + a, pos)
    H = np.zeros((len(measurements), N_ERR))
    H[:, 0:3] = r
    H[:, 6:9] = np.cross(r, a[None, :])
    d_tilde = np.array([m.d_tilde for m in measurements])
    R = np.diag([m.sigma_r**2 for m in measurements])
    return RangeObservationBatch(d_hat - d_tilde, H, R, tuple(m.target_id for m in measurements))


def build_agent_batch(
    x_hat: NominalState,
    l_b: ArrayLike,
    infos: Mapping[int, NeighborInfo],
    measurements: Sequence[RangeMeasurement],
) -> RangeObservationBatch:
    """
    Stacked inter-agent observation with inflated, decorrelated noise.

    Each row's nominal variance is ``G R' G^T`` where ``R'`` doubles the
    neighbour's diagonal position and attitude variances; cross-neighbour
    couplings are dropped, so ``R`` is diagonal.
    """
    if not measurements:
        return RangeObservationBatch.empty()
    l_b = np.asarray(l_b, dtype=float)
    nbrs = [infos[m.target_id] for m in measurements]
    a_i = x_hat.C @ l_b
    a_j = np.array([info.C @ l_b for info in nbrs])
    p_j = np.array([info.position for info in nbrs])
    d_hat, r = _unit_rows(x_hat.p + a_i, p_j + a_j)

    H = np.zeros((len(measurements), N_ERR))
    H[:, 0:3] = r
    H[:, 6:9] = np.cross(r, a_i[None, :])

    g_att = np.cross(r, a_j)
    pos_var = np.array([info.pos_var for info in nbrs])
    att_var = np.array([info.att_var for info in nbrs])
    sigma2 = np.array([m.sigma_r**2 for m in measurements])
    row_var = 2.0 * np.einsum("ij,ij->i", r * r, pos_var) + 2.0 * np.einsum("ij,ij->i", g_att * g_att, att_var) + sigma2

    d_tilde = np.array([m.d_tilde for m in measurements])
    return RangeObservationBatch(d_hat - d_tilde, H, np.diag(row_var), tuple(m.target_id for m in measurements))


def inflated_noise_covers(P_pos_att: ArrayLike, tol: float = 1e-12) -> bool:
    """
    Whether ``diag(2 diag(P_p), 2 diag(P_phi))`` dominates the neighbour's
    actual 6 x 6 position/attitude covariance block.

    Holds for every 2 x 2 block but not for all 3 x 3 ones, so the simulator
    checks it per update and only counts violations.
    """
    P = np.asarray(P_pos_att, dtype=float)
    D = np.diag(2.0 * np.diag(P))
    return bool(np.linalg.eigvalsh(D - P).min() >= -tol * max(1.0, np.abs(P).max()))
