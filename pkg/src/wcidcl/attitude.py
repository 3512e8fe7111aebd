"""
Quaternion and rotation-matrix helpers plus the phi-angle attitude error model.

Quaternions are Hamilton, scalar-first ``[w, x, y, z]`` and represent the
body-to-navigation rotation. The phi-angle error is defined on the navigation
side: an estimated rotation relates to the true one through
``C_hat = (I - [phi x]) C``.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray

_NORM_DRIFT = 1e-6


def normalize(q: ArrayLike) -> NDArray[np.float64]:
    q = np.asarray(q, dtype=float)
    return q / np.sqrt(q @ q)


def skew(v: ArrayLike) -> NDArray[np.float64]:
    """Antisymmetric matrix such that ``skew(a) @ b == cross(a, b)``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quat_multiply(q1: ArrayLike, q2: ArrayLike) -> NDArray[np.float64]:
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conjugate(q: ArrayLike) -> NDArray[np.float64]:
    w, x, y, z = q
    return np.array([w, -x, -y, -z])


def quat_from_rotvec(rv: ArrayLike) -> NDArray[np.float64]:
    """Exponential map from a rotation vector [rad] to a unit quaternion."""
    rv = np.asarray(rv, dtype=float)
    angle = np.sqrt(rv @ rv)
    if angle < 1e-8:
        # second-order series keeps the result exact to double precision
        q = np.r_[1.0 - angle**2 / 8.0, 0.5 * rv * (1.0 - angle**2 / 24.0)]
        return normalize(q)
    half = 0.5 * angle
    return np.r_[np.cos(half), np.sin(half) * rv / angle]


def quat_to_rotvec(q: ArrayLike) -> NDArray[np.float64]:
    """Logarithm map; returns the rotation vector with angle in [0, pi]."""
    q = normalize(q)
    if q[0] < 0.0:
        q = -q
    vec = q[1:]
    s = np.sqrt(vec @ vec)
    if s < 1e-12:
        return 2.0 * vec
    angle = 2.0 * np.arctan2(s, q[0])
    return angle * vec / s


def quat_to_rotmat(q: ArrayLike) -> NDArray[np.float64]:
    """
    Rotation matrix ``C_b^n`` of a body-to-navigation quaternion.

    Renormalizes the input when its norm has drifted by more than 1e-6.
    """
    q = np.asarray(q, dtype=float)
    if abs(q @ q - 1.0) > _NORM_DRIFT:
        q = normalize(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotmat_to_quat(C: ArrayLike) -> NDArray[np.float64]:
    C = np.asarray(C, dtype=float)
    tr = np.trace(C)
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (C[2, 1] - C[1, 2]) / s, (C[0, 2] - C[2, 0]) / s, (C[1, 0] - C[0, 1]) / s]
    elif C[0, 0] > C[1, 1] and C[0, 0] > C[2, 2]:
        s = 2.0 * np.sqrt(1.0 + C[0, 0] - C[1, 1] - C[2, 2])
        q = [(C[2, 1] - C[1, 2]) / s, 0.25 * s, (C[0, 1] + C[1, 0]) / s, (C[0, 2] + C[2, 0]) / s]
    elif C[1, 1] > C[2, 2]:
        s = 2.0 * np.sqrt(1.0 + C[1, 1] - C[0, 0] - C[2, 2])
        q = [(C[0, 2] - C[2, 0]) / s, (C[0, 1] + C[1, 0]) / s, 0.25 * s, (C[1, 2] + C[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + C[2, 2] - C[0, 0] - C[1, 1])
        q = [(C[1, 0] - C[0, 1]) / s, (C[0, 2] + C[2, 0]) / s, (C[1, 2] + C[2, 1]) / s, 0.25 * s]
    q = normalize(q)
    return q if q[0] >= 0.0 else -q


def rotmat_from_rotvec(rv: ArrayLike) -> NDArray[np.float64]:
    """Rodrigues formula."""
    rv = np.asarray(rv, dtype=float)
    angle = np.sqrt(rv @ rv)
    K = skew(rv)
    if angle < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return (
        np.eye(3)
        + np.sin(angle) / angle * K
        + (1.0 - np.cos(angle)) / angle**2 * K @ K
    )


def quat_from_euler(roll: float, pitch: float, yaw: float) -> NDArray[np.float64]:
    """Body-to-navigation quaternion for a ZYX (yaw, pitch, roll) sequence."""
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    return np.array(
        [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ]
    )


def perturb_rotation(C: ArrayLike, phi: ArrayLike) -> NDArray[np.float64]:
    """
    First-order attitude perturbation ``(I - [phi x]) C``.

    The result is deliberately not re-orthonormalized; it is the linearized
    model used by the observation equations.
    """
    return (np.eye(3) - skew(phi)) @ np.asarray(C, dtype=float)


def correct_attitude(q_hat: ArrayLike, phi_est: ArrayLike) -> NDArray[np.float64]:
    """
    Remove an estimated phi-angle error from a nominal attitude.

    With ``C_hat = exp(-[phi x]) C`` the corrected attitude is
    ``C = exp([phi x]) C_hat``, i.e. a navigation-side left multiplication by
    the exact exponential map of ``phi_est``.
    """
    return normalize(quat_multiply(quat_from_rotvec(phi_est), q_hat))


def attitude_error(q_hat: ArrayLike, q_true: ArrayLike) -> NDArray[np.float64]:
    """Phi-angle error of ``q_hat`` with respect to ``q_true`` (inverse of ``correct_attitude``)."""
    return quat_to_rotvec(quat_multiply(q_true, quat_conjugate(q_hat)))
