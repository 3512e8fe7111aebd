"""
Strapdown mechanization and error-state propagation for a simplified MEMS INS.

Frame: local-level navigation frame, z up, gravity ``[0, 0, -g]``. Earth
rotation and transport rate are ignored.

Error-state ordering is ``[dp, dv, phi, dbg, dba]``. Position and velocity
errors are estimate minus truth, ``phi`` follows ``C_hat = (I - [phi x]) C``
and the bias errors are the residual IMU output errors after compensation
(truth minus estimate), which gives ``d(dv)/dt = f_n x phi + C dba`` and
``d(phi)/dt = -C dbg``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit
from numpy.typing import ArrayLike, NDArray

from .attitude import normalize, quat_from_rotvec, quat_multiply, quat_to_rotmat, skew

N_ERR = 15
POS = slice(0, 3)
VEL = slice(3, 6)
ATT = slice(6, 9)
BG = slice(9, 12)
BA = slice(12, 15)

GRAVITY = 9.80665

_DEG = np.pi / 180.0
_HOUR = 3600.0
_UG = 1e-6 * GRAVITY


@dataclass
class NominalState:
    p: NDArray[np.float64]
    v: NDArray[np.float64]
    q: NDArray[np.float64]
    bg: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    ba: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.p = np.array(self.p, dtype=float)
        self.v = np.array(self.v, dtype=float)
        self.q = normalize(self.q)
        self.bg = np.array(self.bg, dtype=float)
        self.ba = np.array(self.ba, dtype=float)

    def copy(self) -> NominalState:
        return NominalState(self.p.copy(), self.v.copy(), self.q.copy(), self.bg.copy(), self.ba.copy())

    @property
    def C(self) -> NDArray[np.float64]:
        return quat_to_rotmat(self.q)


@dataclass(frozen=True)
class ImuSample:
    """Specific force [m/s^2] and angular rate [rad/s] in body frame, over ``dt`` seconds."""

    f_b: NDArray[np.float64]
    w_b: NDArray[np.float64]
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"IMU sample dt must be positive, got {self.dt}")


@dataclass(frozen=True)
class ImuNoiseModel:
    """
    IMU error magnitudes in SI units.

    Attributes
    ----------
    gyro_arw : float
        Angle random walk [rad/sqrt(s)].
    accel_vrw : float
        Velocity random walk [m/s/sqrt(s)].
    gyro_bias_sigma0 : float
        Standard deviation of the constant gyro bias [rad/s].
    accel_bias_sigma0 : float
        Standard deviation of the constant accelerometer bias [m/s^2].
    gravity : float
        Gravity magnitude [m/s^2].
    """

    gyro_arw: float = 0.15 * _DEG / 60.0
    accel_vrw: float = 0.012 / 60.0
    gyro_bias_sigma0: float = 300.0 * _DEG / _HOUR
    accel_bias_sigma0: float = 1000.0 * _UG
    gravity: float = GRAVITY

    def __post_init__(self):
        for name in ("gyro_arw", "accel_vrw", "gyro_bias_sigma0", "accel_bias_sigma0", "gravity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_datasheet_units(
        cls,
        gyro_arw_deg_sqrt_h: float,
        accel_vrw_mps_sqrt_h: float,
        gyro_bias_deg_h: float,
        accel_bias_ug: float,
        gravity: float = GRAVITY,
    ) -> ImuNoiseModel:
        return cls(
            gyro_arw=gyro_arw_deg_sqrt_h * _DEG / 60.0,
            accel_vrw=accel_vrw_mps_sqrt_h / 60.0,
            gyro_bias_sigma0=gyro_bias_deg_h * _DEG / _HOUR,
            accel_bias_sigma0=accel_bias_ug * _UG,
            gravity=gravity,
        )

    @classmethod
    def zero(cls, gravity: float = GRAVITY) -> ImuNoiseModel:
        return cls(0.0, 0.0, 0.0, 0.0, gravity)

    @property
    def g_n(self) -> NDArray[np.float64]:
        return np.array([0.0, 0.0, -self.gravity])


def mechanize(x: NominalState, imu: ImuSample, gravity: float = GRAVITY) -> NominalState:
    """
    Propagate the nominal state through one IMU sample.

    Velocity uses the attitude at the start of the interval, position the
    trapezoid of the two velocities, and attitude the exact exponential map of
    the bias-compensated body rotation increment.
    """
    dt = imu.dt
    C = quat_to_rotmat(x.q)
    dv = (C @ (imu.f_b - x.ba) + np.array([0.0, 0.0, -gravity])) * dt
    p = x.p + x.v * dt + 0.5 * dv * dt
    v = x.v + dv
    q = normalize(quat_multiply(x.q, quat_from_rotvec((imu.w_b - x.bg) * dt)))
    return NominalState(p, v, q, x.bg.copy(), x.ba.copy())


def error_dynamics(C: ArrayLike, f_b: ArrayLike) -> NDArray[np.float64]:
    """Continuous-time error-state matrix F for attitude ``C`` and compensated specific force ``f_b``."""
    C = np.asarray(C, dtype=float)
    F = np.zeros((N_ERR, N_ERR))
    F[POS, VEL] = np.eye(3)
    F[VEL, ATT] = skew(C @ np.asarray(f_b, dtype=float))
    F[VEL, BA] = C
    F[ATT, BG] = -C
    return F


def error_transition(
    x: NominalState, imu: ImuSample, noise: ImuNoiseModel | None = None
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Discrete transition ``Phi = I + F dt`` and process noise ``Qd = G Qc G^T dt``.

    Biases are random constants, so only the velocity and attitude rows are
    driven by white noise.
    """
    noise = noise or ImuNoiseModel()
    C = quat_to_rotmat(x.q)
    F = error_dynamics(C, imu.f_b - x.ba)
    Phi = np.eye(N_ERR) + F * imu.dt

    G = np.zeros((N_ERR, 6))
    G[VEL, 0:3] = C
    G[ATT, 3:6] = -C
    Qc = np.diag(np.r_[np.full(3, noise.accel_vrw**2), np.full(3, noise.gyro_arw**2)])
    Qd = G @ Qc @ G.T * imu.dt
    return Phi, 0.5 * (Qd + Qd.T)


def propagate_covariance(P: ArrayLike, Phi: ArrayLike, Qd: ArrayLike) -> NDArray[np.float64]:
    P = np.asarray(Phi) @ np.asarray(P) @ np.asarray(Phi).T + np.asarray(Qd)
    return 0.5 * (P + P.T)


def ins_error_sensitivity(C_bn: ArrayLike, f_b: ArrayLike, T_a: float) -> NDArray[np.float64]:
    """
    Map from an initial error state to the position error after ``T_a`` seconds
    of straight, constant-velocity dead reckoning (3 x 15).
    """
    if T_a < 0:
        raise ValueError("T_a must be non-negative")
    C = np.asarray(C_bn, dtype=float)
    fx = skew(C @ np.asarray(f_b, dtype=float))
    return np.hstack(
        [
            np.eye(3),
            np.eye(3) * T_a,
            0.5 * fx * T_a**2,
            -(1.0 / 6.0) * fx @ C * T_a**3,
            0.5 * C * T_a**2,
        ]
    )


def wci_weight_matrix(S: ArrayLike) -> NDArray[np.float64]:
    S = np.asarray(S, dtype=float)
    return S.T @ S


# -- compiled inner loop ------------------------------------------------------


@njit(cache=True)
def _rotmat(q):
    w, x, y, z = q[0], q[1], q[2], q[3]
    C = np.empty((3, 3))
    C[0, 0] = 1 - 2 * (y * y + z * z)
    C[0, 1] = 2 * (x * y - w * z)
    C[0, 2] = 2 * (x * z + w * y)
    C[1, 0] = 2 * (x * y + w * z)
    C[1, 1] = 1 - 2 * (x * x + z * z)
    C[1, 2] = 2 * (y * z - w * x)
    C[2, 0] = 2 * (x * z - w * y)
    C[2, 1] = 2 * (y * z + w * x)
    C[2, 2] = 1 - 2 * (x * x + y * y)
    return C


@njit(cache=True)
def _apply_F(C, fn, M, out):
    # out = F @ M using the sparsity of F
    K = M.shape[1]
    for k in range(K):
        out[0, k] = M[3, k]
        out[1, k] = M[4, k]
        out[2, k] = M[5, k]
        # skew(fn) @ phi rows
        out[3, k] = -fn[2] * M[7, k] + fn[1] * M[8, k]
        out[4, k] = fn[2] * M[6, k] - fn[0] * M[8, k]
        out[5, k] = -fn[1] * M[6, k] + fn[0] * M[7, k]
        for r in range(3):
            out[3 + r, k] += C[r, 0] * M[12, k] + C[r, 1] * M[13, k] + C[r, 2] * M[14, k]
            out[6 + r, k] = -(C[r, 0] * M[9, k] + C[r, 1] * M[10, k] + C[r, 2] * M[11, k])
        for r in range(9, 15):
            out[r, k] = 0.0


@njit(cache=True)
def _cov_step(C, fn, P, h, var_vrw, var_arw, A, B, At):
    # P <- Phi P Phi^T + Qd with Phi = I + F h, in place
    _apply_F(C, fn, P, A)
    for r in range(15):
        for c in range(15):
            At[r, c] = A[c, r]
    _apply_F(C, fn, At, B)
    for r in range(15):
        for c in range(r, 15):
            val = P[r, c] + h * (A[r, c] + A[c, r]) + h * h * 0.5 * (B[r, c] + B[c, r])
            P[r, c] = val
            P[c, r] = val
    for r in range(3, 6):
        P[r, r] += var_vrw * h
    for r in range(6, 9):
        P[r, r] += var_arw * h


@njit(cache=True)
def _nav_step(p, v, q, bg, fn, w, h, gravity):
    dv0 = fn[0] * h
    dv1 = fn[1] * h
    dv2 = (fn[2] - gravity) * h
    p[0] += v[0] * h + 0.5 * dv0 * h
    p[1] += v[1] * h + 0.5 * dv1 * h
    p[2] += v[2] * h + 0.5 * dv2 * h
    v[0] += dv0
    v[1] += dv1
    v[2] += dv2

    rx = (w[0] - bg[0]) * h
    ry = (w[1] - bg[1]) * h
    rz = (w[2] - bg[2]) * h
    ang = np.sqrt(rx * rx + ry * ry + rz * rz)
    if ang < 1e-8:
        dw = 1.0 - ang * ang / 8.0
        s = 0.5 * (1.0 - ang * ang / 24.0)
    else:
        dw = np.cos(0.5 * ang)
        s = np.sin(0.5 * ang) / ang
    dx, dy, dz = s * rx, s * ry, s * rz
    w0, x0, y0, z0 = q[0], q[1], q[2], q[3]
    q[0] = w0 * dw - x0 * dx - y0 * dy - z0 * dz
    q[1] = w0 * dx + x0 * dw + y0 * dz - z0 * dy
    q[2] = w0 * dy - x0 * dz + y0 * dw + z0 * dx
    q[3] = w0 * dz + x0 * dy - y0 * dx + z0 * dw
    nq = np.sqrt(q[0] ** 2 + q[1] ** 2 + q[2] ** 2 + q[3] ** 2)
    for k in range(4):
        q[k] /= nq


@njit(cache=True)
def _predict_samples(p, v, q, bg, ba, P, f_b, w_b, dt, gravity, var_vrw, var_arw):
    A = np.empty((15, 15))
    B = np.empty((15, 15))
    At = np.empty((15, 15))
    for i in range(f_b.shape[0]):
        C = _rotmat(q)
        fn = C @ (f_b[i] - ba)
        _cov_step(C, fn, P, dt[i], var_vrw, var_arw, A, B, At)
        _nav_step(p, v, q, bg, fn, w_b[i], dt[i], gravity)


@njit(cache=True)
def _transition_samples(p, v, q, bg, ba, Phi, Q, f_b, w_b, dt, gravity, var_vrw, var_arw):
    # Phi <- Phi_k ... Phi_1, Q <- accumulated process noise over the block
    A = np.empty((15, 15))
    B = np.empty((15, 15))
    At = np.empty((15, 15))
    T = np.empty((15, 15))
    for i in range(f_b.shape[0]):
        h = dt[i]
        C = _rotmat(q)
        fn = C @ (f_b[i] - ba)
        _cov_step(C, fn, Q, h, var_vrw, var_arw, A, B, At)
        _apply_F(C, fn, Phi, T)
        for r in range(15):
            for c in range(15):
                Phi[r, c] += h * T[r, c]
        _nav_step(p, v, q, bg, fn, w_b[i], h, gravity)


@njit(cache=True)
def _mechanize_samples(p, v, q, bg, ba, f_b, w_b, dt, gravity):
    for i in range(f_b.shape[0]):
        fn = _rotmat(q) @ (f_b[i] - ba)
        _nav_step(p, v, q, bg, fn, w_b[i], dt[i], gravity)


def predict_samples(
    x: NominalState,
    P: NDArray[np.float64],
    f_b: NDArray[np.float64],
    w_b: NDArray[np.float64],
    dt: NDArray[np.float64],
    noise: ImuNoiseModel,
) -> tuple[NominalState, NDArray[np.float64]]:
    """
    Mechanize and propagate the covariance through a block of IMU samples.

    Equivalent to looping ``mechanize`` / ``error_transition`` /
    ``propagate_covariance`` sample by sample, but compiled.
    """
    x = x.copy()
    P = np.array(P, dtype=float)
    _predict_samples(
        x.p, x.v, x.q, x.bg, x.ba, P,
        np.ascontiguousarray(f_b, dtype=float),
        np.ascontiguousarray(w_b, dtype=float),
        np.ascontiguousarray(dt, dtype=float),
        float(noise.gravity), float(noise.accel_vrw**2), float(noise.gyro_arw**2),
    )
    return x, P


def mechanize_samples(
    x: NominalState,
    f_b: NDArray[np.float64],
    w_b: NDArray[np.float64],
    dt: NDArray[np.float64],
    gravity: float = GRAVITY,
) -> NominalState:
    x = x.copy()
    _mechanize_samples(
        x.p, x.v, x.q, x.bg, x.ba,
        np.ascontiguousarray(f_b, dtype=float),
        np.ascontiguousarray(w_b, dtype=float),
        np.ascontiguousarray(dt, dtype=float),
        float(gravity),
    )
    return x


def transition_samples(
    x: NominalState,
    f_b: NDArray[np.float64],
    w_b: NDArray[np.float64],
    dt: NDArray[np.float64],
    noise: ImuNoiseModel,
) -> tuple[NominalState, NDArray[np.float64], NDArray[np.float64]]:
    """
    Mechanize through a block of IMU samples and return the composed
    transition and accumulated process noise, so that
    ``P_end = Phi P Phi^T + Q`` for any starting ``P``.
    """
    x = x.copy()
    Phi = np.eye(N_ERR)
    Q = np.zeros((N_ERR, N_ERR))
    _transition_samples(
        x.p, x.v, x.q, x.bg, x.ba, Phi, Q,
        np.ascontiguousarray(f_b, dtype=float),
        np.ascontiguousarray(w_b, dtype=float),
        np.ascontiguousarray(dt, dtype=float),
        float(noise.gravity), float(noise.accel_vrw**2), float(noise.gyro_arw**2),
    )
    return x, Phi, Q
