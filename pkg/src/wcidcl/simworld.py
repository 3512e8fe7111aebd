"""
Deterministic truth worlds for swarm cooperative-localization experiments.

A world is fully determined by its configuration, the base seed and the run
index. Every random quantity comes from its own counter-based substream keyed
by ``(run, agent, stream)``, so switching an event on or off never shifts the
draws of anything else.

Kinematics: each agent flies the same segment profile from its own random
start pose. Speed, yaw and pitch rates are piecewise constant, roll is zero
and the velocity is aligned with the body x axis. The clean IMU samples are
the exact inverse of the discrete mechanization in ``ins``, so mechanizing
them reproduces the truth to round-off.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .attitude import quat_from_rotvec, quat_multiply, quat_to_rotmat
from .ins import GRAVITY, N_ERR, ImuNoiseModel, ImuSample, NominalState
from .ranging import RangeKind, RangeMeasurement

_DEG = math.pi / 180.0

# substream ids
STREAM_POSE = 0
STREAM_BIAS = 1
STREAM_IMU = 2
STREAM_INIT = 3
STREAM_RANGE = 4
STREAM_LOSS = 5


class InvalidSegment(ValueError):
    """A trajectory segment with non-physical parameters."""


# -- trajectory segments ------------------------------------------------------


@dataclass(frozen=True)
class Accelerate:
    a: float
    dur: float


@dataclass(frozen=True)
class EightShape:
    """Two equal-duration full circles of opposite turn direction."""

    dur: float


@dataclass(frozen=True)
class PitchRamp:
    delta_deg: float
    dur: float


@dataclass(frozen=True)
class ConstantVelocity:
    dur: float


@dataclass(frozen=True)
class CircularTurn:
    """Heading change ``angle_deg`` at constant rate; negative is clockwise seen from above."""

    angle_deg: float
    dur: float


@dataclass(frozen=True)
class DecelerateToHover:
    dur: float


TrajectorySegment = Union[Accelerate, EightShape, PitchRamp, ConstantVelocity, CircularTurn, DecelerateToHover]


def default_segments() -> list[TrajectorySegment]:
    """The 120 s nominal profile."""
    return [
        Accelerate(0.4, 10.0),
        EightShape(26.0),
        PitchRamp(15.0, 1.0),
        ConstantVelocity(19.0),
        PitchRamp(-15.0, 1.0),
        ConstantVelocity(13.0),
        CircularTurn(-180.0, 20.0),
        ConstantVelocity(20.0),
        DecelerateToHover(10.0),
    ]


def truncate_segments(segments: Sequence[TrajectorySegment], duration: float) -> list[TrajectorySegment]:
    """Leading part of a profile lasting ``duration`` seconds."""
    out, left = [], duration
    for seg in segments:
        if left <= 0:
            break
        if seg.dur <= left:
            out.append(seg)
        elif isinstance(seg, EightShape):
            # keep the rates of the full figure; an eight cut short is just its first circle(s)
            half = seg.dur / 2
            out.append(CircularTurn(360.0, half) if left >= half else CircularTurn(360.0 * left / half, left))
            if left > half:
                out.append(CircularTurn(-360.0 * (left - half) / half, left - half))
        else:
            scale = left / seg.dur
            if isinstance(seg, Accelerate):
                out.append(Accelerate(seg.a, left))
            elif isinstance(seg, PitchRamp):
                out.append(PitchRamp(seg.delta_deg * scale, left))
            elif isinstance(seg, CircularTurn):
                out.append(CircularTurn(seg.angle_deg * scale, left))
            elif isinstance(seg, ConstantVelocity):
                out.append(ConstantVelocity(left))
            else:
                raise InvalidSegment("cannot truncate a deceleration to hover")
        left -= seg.dur
    return out


@dataclass(frozen=True)
class _Phase:
    t0: float
    dur: float
    s0: float
    psi0: float
    theta0: float
    s_dot: float
    psi_dot: float
    theta_dot: float


def _phases(segments: Sequence[TrajectorySegment], s0: float, psi0: float, theta0: float) -> list[_Phase]:
    phases: list[_Phase] = []
    t, s, psi, th = 0.0, s0, psi0, theta0

    def push(dur, s_dot=0.0, psi_dot=0.0, th_dot=0.0):
        nonlocal t, s, psi, th
        phases.append(_Phase(t, dur, s, psi, th, s_dot, psi_dot, th_dot))
        t += dur
        s += s_dot * dur
        psi += psi_dot * dur
        th += th_dot * dur

    for seg in segments:
        if not (seg.dur > 0 and math.isfinite(seg.dur)):
            raise InvalidSegment(f"{seg!r}: duration must be positive")
        if isinstance(seg, Accelerate):
            if s + seg.a * seg.dur < -1e-12:
                raise InvalidSegment(f"{seg!r}: speed would become negative")
            push(seg.dur, s_dot=seg.a)
        elif isinstance(seg, EightShape):
            rate = 2.0 * math.pi / (seg.dur / 2)
            push(seg.dur / 2, psi_dot=rate)
            push(seg.dur / 2, psi_dot=-rate)
        elif isinstance(seg, PitchRamp):
            if abs(th + seg.delta_deg * _DEG) >= math.pi / 2:
                raise InvalidSegment(f"{seg!r}: pitch would reach +-90 deg")
            push(seg.dur, th_dot=seg.delta_deg * _DEG / seg.dur)
        elif isinstance(seg, ConstantVelocity):
            push(seg.dur)
        elif isinstance(seg, CircularTurn):
            push(seg.dur, psi_dot=seg.angle_deg * _DEG / seg.dur)
        elif isinstance(seg, DecelerateToHover):
            push(seg.dur, s_dot=-s / seg.dur)
        else:
            raise InvalidSegment(f"unknown segment {seg!r}")
    return phases


def profile_duration(segments: Sequence[TrajectorySegment]) -> float:
    return float(sum(seg.dur for seg in segments))


# -- batched quaternion helpers ----------------------------------------------


def _qmul(a, b):
    w1, x1, y1, z1 = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    w2, x2, y2, z2 = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def _qlog(q):
    q = np.where(q[..., :1] < 0, -q, q)
    s = np.linalg.norm(q[..., 1:], axis=-1)
    angle = 2.0 * np.arctan2(s, q[..., 0])
    scale = np.where(s > 1e-12, angle / np.where(s > 1e-12, s, 1.0), 2.0)
    return q[..., 1:] * scale[..., None]


def _rotmats(q):
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=1,
    )


def _heading_quats(psi, theta):
    # yaw psi about z, then nose-up elevation theta (rotation of -theta about body y)
    cy, sy = np.cos(psi / 2), np.sin(psi / 2)
    cp, sp = np.cos(-theta / 2), np.sin(-theta / 2)
    return np.stack([cp * cy, -sp * sy, sp * cy, cp * sy], axis=-1)


# -- truth ---------------------------------------------------------------------


@dataclass
class TruthTrajectory:
    """Truth at IMU rate. ``f_b[k]``, ``w_b[k]`` drive the state from ``k`` to ``k + 1``."""

    t: NDArray[np.float64]
    p: NDArray[np.float64]
    v: NDArray[np.float64]
    q: NDArray[np.float64]
    f_b: NDArray[np.float64]
    w_b: NDArray[np.float64]
    dt: float

    def state(self, k: int) -> NominalState:
        return NominalState(self.p[k], self.v[k], self.q[k])

    def imu(self, k: int) -> ImuSample:
        return ImuSample(self.f_b[k], self.w_b[k], self.dt)

    def __len__(self) -> int:
        return len(self.t)


def generate_truth(
    segments: Sequence[TrajectorySegment],
    x0: NominalState,
    imu_rate: float,
    gravity: float = GRAVITY,
) -> TruthTrajectory:
    """
    Truth trajectory and its clean IMU stream.

    The start attitude must have zero roll, and the start velocity must point
    along the body x axis.
    """
    if not imu_rate > 0:
        raise InvalidSegment("IMU rate must be positive")
    C0 = x0.C
    if abs(C0[2, 1]) > 1e-9:
        raise InvalidSegment("initial roll must be zero")
    ux = C0[:, 0]
    psi0 = math.atan2(ux[1], ux[0])
    theta0 = math.asin(max(-1.0, min(1.0, ux[2])))
    s0 = float(np.linalg.norm(x0.v))
    if s0 > 0 and np.linalg.norm(x0.v - s0 * ux) > 1e-9 * max(1.0, s0):
        raise InvalidSegment("initial velocity must be aligned with the body x axis")

    phases = _phases(segments, s0, psi0, theta0)
    total = phases[-1].t0 + phases[-1].dur if phases else 0.0
    n = int(round(total * imu_rate))
    dt = 1.0 / imu_rate
    t = np.arange(n + 1) * dt

    t0 = np.array([ph.t0 for ph in phases])
    idx = np.clip(np.searchsorted(t0, t, side="right") - 1, 0, len(phases) - 1)
    tau = t - t0[idx]
    take = lambda name: np.array([getattr(ph, name) for ph in phases])[idx]
    s = take("s0") + take("s_dot") * tau
    psi = take("psi0") + take("psi_dot") * tau
    theta = take("theta0") + take("theta_dot") * tau
    s = np.where(np.abs(s) < 1e-12, 0.0, s)

    q = _heading_quats(psi, theta)
    u = np.stack([np.cos(theta) * np.cos(psi), np.cos(theta) * np.sin(psi), np.sin(theta)], axis=-1)
    v = s[:, None] * u
    p = np.empty_like(v)
    p[0] = x0.p
    p[1:] = x0.p + np.cumsum(0.5 * (v[1:] + v[:-1]) * dt, axis=0)

    qc = q[:-1] * np.array([1.0, -1.0, -1.0, -1.0])
    w_b = _qlog(_qmul(qc, q[1:])) / dt
    C = _rotmats(q[:-1])
    acc = (v[1:] - v[:-1]) / dt + np.array([0.0, 0.0, gravity])
    f_b = np.einsum("kji,kj->ki", C, acc)
    return TruthTrajectory(t, p, v, q, f_b, w_b, dt)


# -- IMU corruption ------------------------------------------------------------


@dataclass(frozen=True)
class ImuBiases:
    bg: NDArray[np.float64]
    ba: NDArray[np.float64]

    @classmethod
    def draw(cls, noise: ImuNoiseModel, rng: np.random.Generator) -> ImuBiases:
        return cls(rng.normal(0.0, noise.gyro_bias_sigma0, 3), rng.normal(0.0, noise.accel_bias_sigma0, 3))


def corrupt_imu_series(
    f_b: NDArray, w_b: NDArray, dt: float, biases: ImuBiases, noise: ImuNoiseModel, rng: np.random.Generator
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Add constant biases and white noise with density ARW / VRW (std ``density / sqrt(dt)``)."""
    f_b = np.asarray(f_b, dtype=float)
    w_b = np.asarray(w_b, dtype=float)
    # gyro first, then accel; the order is part of the stream definition
    nw = rng.standard_normal(w_b.shape) * (noise.gyro_arw / math.sqrt(dt))
    nf = rng.standard_normal(f_b.shape) * (noise.accel_vrw / math.sqrt(dt))
    return f_b + biases.ba + nf, w_b + biases.bg + nw


def corrupt_imu(clean: ImuSample, biases: ImuBiases, noise: ImuNoiseModel, rng: np.random.Generator) -> ImuSample:
    f, w = corrupt_imu_series(clean.f_b, clean.w_b, clean.dt, biases, noise, rng)
    return ImuSample(f, w, clean.dt)


# -- connectivity and events ---------------------------------------------------


@dataclass(frozen=True)
class ConnectivityMap:
    anchors: dict[int, tuple[int, ...]]
    neighbors: dict[int, tuple[int, ...]]

    def __post_init__(self):
        ids = set(self.anchors)
        if ids != set(self.neighbors):
            raise ValueError("anchor and neighbour maps must cover the same agents")
        for k, nb in self.neighbors.items():
            if k in nb or not set(nb) <= ids:
                raise ValueError(f"inconsistent neighbour list for agent {k}")


def build_connectivity(n_agents: int, n_anchors: int = 4) -> ConnectivityMap:
    """
    Agent 1 sees no anchor, the last agent sees all of them and every other
    agent sees two; the inter-agent graph is complete.
    """
    if n_agents < 1:
        raise ValueError("need at least one agent")
    anchors = {}
    for k in range(1, n_agents + 1):
        if k == 1:
            anchors[k] = ()
        elif k == n_agents:
            anchors[k] = tuple(range(1, n_anchors + 1))
        else:
            anchors[k] = tuple(sorted({(k % n_anchors) + 1, ((k + 1) % n_anchors) + 1}))
    ids = range(1, n_agents + 1)
    neighbors = {k: tuple(j for j in ids if j != k) for k in ids}
    return ConnectivityMap(anchors, neighbors)


@dataclass(frozen=True)
class PacketLoss:
    """From the event time on, the agent's data fails to reach the center with probability ``prob``."""

    agent: int
    prob: float

    def __post_init__(self):
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError("loss probability must lie in [0, 1]")


@dataclass(frozen=True)
class Offline:
    agent: int


@dataclass(frozen=True)
class Rejoin:
    agent: int


Event = Union[PacketLoss, Offline, Rejoin]


@dataclass
class EventSchedule:
    events: list[tuple[float, Event]] = field(default_factory=list)

    def __post_init__(self):
        self.events = sorted(self.events, key=lambda te: te[0])

    def validate(self, duration: float, n_agents: int) -> None:
        for t, ev in self.events:
            if not 0.0 <= t <= duration:
                raise ValueError(f"event {ev!r} at {t} s outside the run [0, {duration}] s")
            if not 1 <= ev.agent <= n_agents:
                raise ValueError(f"event {ev!r} names an unknown agent")

    def loss_prob(self, agent: int, t: float) -> float:
        prob = 0.0
        for te, ev in self.events:
            if te <= t and isinstance(ev, PacketLoss) and ev.agent == agent:
                prob = ev.prob
        return prob

    def is_offline(self, agent: int, t: float) -> bool:
        off = False
        for te, ev in self.events:
            if te <= t and ev.agent == agent and isinstance(ev, (Offline, Rejoin)):
                off = isinstance(ev, Offline)
        return off

    @classmethod
    def robustness(cls, agent: int = 1) -> EventSchedule:
        return cls([(30.0, PacketLoss(agent, 0.05)), (90.0, Offline(agent)), (110.0, Rejoin(agent))])


# -- world ---------------------------------------------------------------------


DEFAULT_ANCHORS = ((100.0, 100.0, 0.0), (-100.0, 100.0, 100.0), (-100.0, -100.0, 0.0), (100.0, -100.0, 100.0))


@dataclass
class WorldConfig:
    n_agents: int = 8
    anchors: tuple[tuple[float, float, float], ...] = DEFAULT_ANCHORS
    sigma_r: float = 0.1
    f_uwb: float = 5.0
    lever: tuple[float, float, float] = (0.1, 0.0, 0.1)
    sigma_p0: float = 0.3
    sigma_v0: float = 0.1
    sigma_phi0_deg: float = 3.0
    T_a: float = 5.0
    n_sim: int = 10
    imu_noise: ImuNoiseModel = field(default_factory=ImuNoiseModel)
    imu_rate: float = 200.0
    seed: int = 0
    segments: list[TrajectorySegment] = field(default_factory=default_segments)
    start_box: tuple[float, float, float] = (60.0, 60.0, 20.0)

    def validate(self) -> None:
        positive = ("n_agents", "f_uwb", "imu_rate", "n_sim")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("sigma_r", "sigma_p0", "sigma_v0", "sigma_phi0_deg", "T_a"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if len(self.anchors) == 0 or any(len(a) != 3 for a in self.anchors):
            raise ValueError("anchors must be a non-empty list of 3-vectors")
        if len(self.lever) != 3 or len(self.start_box) != 3:
            raise ValueError("lever arm and start box must be 3-vectors")
        ratio = self.imu_rate / self.f_uwb
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("IMU rate must be an integer multiple of the UWB rate")
        # trigger InvalidSegment on bad profiles
        _phases(self.segments, 0.0, 0.0, 0.0)

    @property
    def duration(self) -> float:
        return profile_duration(self.segments)

    @property
    def samples_per_epoch(self) -> int:
        return int(round(self.imu_rate / self.f_uwb))

    @property
    def n_epochs(self) -> int:
        return int(round(self.duration * self.imu_rate)) // self.samples_per_epoch

    @property
    def anchor_map(self) -> dict[int, NDArray[np.float64]]:
        return {k + 1: np.asarray(a, dtype=float) for k, a in enumerate(self.anchors)}

    def initial_covariance(self) -> NDArray[np.float64]:
        n = self.imu_noise
        return np.diag(
            np.r_[
                np.full(3, self.sigma_p0**2),
                np.full(3, self.sigma_v0**2),
                np.full(3, (self.sigma_phi0_deg * _DEG) ** 2),
                np.full(3, n.gyro_bias_sigma0**2),
                np.full(3, n.accel_bias_sigma0**2),
            ]
        )


def substream(seed: int, run: int, agent: int, stream: int) -> np.random.Generator:
    """Independent generator for ``(run, agent, stream)``."""
    ss = np.random.SeedSequence(seed, spawn_key=(run, agent, stream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class World:
    """Everything random about one Monte-Carlo run, realized up front."""

    config: WorldConfig
    run: int
    truth: list[TruthTrajectory]
    biases: list[ImuBiases]
    f_meas: list[NDArray[np.float64]]
    w_meas: list[NDArray[np.float64]]
    x0_hat: list[NominalState]
    P0: NDArray[np.float64]
    range_noise: NDArray[np.float64]  # (agents, epochs, anchors + agents), standard normal
    loss_draw: NDArray[np.float64]  # (agents, epochs), uniform
    connectivity: ConnectivityMap

    @property
    def n_agents(self) -> int:
        return self.config.n_agents

    def epoch_time(self, e: int) -> float:
        return e * self.config.samples_per_epoch / self.config.imu_rate

    def truth_index(self, e: int) -> int:
        return e * self.config.samples_per_epoch

    def true_error(self, agent: int, k: int, x_hat: NominalState) -> NDArray[np.float64]:
        """Error state of an estimate at truth index ``k`` (estimate minus truth convention)."""
        from .attitude import attitude_error

        tr = self.truth[agent - 1]
        b = self.biases[agent - 1]
        return np.r_[
            x_hat.p - tr.p[k],
            x_hat.v - tr.v[k],
            attitude_error(x_hat.q, tr.q[k]),
            b.bg - x_hat.bg,
            b.ba - x_hat.ba,
        ]


def build_world(cfg: WorldConfig, run: int = 0) -> World:
    cfg.validate()
    n = cfg.n_agents
    noise = cfg.imu_noise
    P0 = cfg.initial_covariance()
    box = np.asarray(cfg.start_box, dtype=float)
    n_ep = cfg.n_epochs
    n_targets = len(cfg.anchors) + n

    truth, biases, f_meas, w_meas, x0_hat = [], [], [], [], []
    range_noise = np.empty((n, n_ep, n_targets))
    loss_draw = np.empty((n, n_ep))
    for k in range(n):
        agent = k + 1
        rng = substream(cfg.seed, run, agent, STREAM_POSE)
        p0 = rng.uniform(-0.5, 0.5, 3) * box
        yaw = rng.uniform(-math.pi, math.pi)
        q0 = np.array([math.cos(yaw / 2), 0.0, 0.0, math.sin(yaw / 2)])
        tr = generate_truth(cfg.segments, NominalState(p0, np.zeros(3), q0), cfg.imu_rate, noise.gravity)
        truth.append(tr)

        b = ImuBiases.draw(noise, substream(cfg.seed, run, agent, STREAM_BIAS))
        biases.append(b)
        f, w = corrupt_imu_series(tr.f_b, tr.w_b, tr.dt, b, noise, substream(cfg.seed, run, agent, STREAM_IMU))
        f_meas.append(f)
        w_meas.append(w)

        rng = substream(cfg.seed, run, agent, STREAM_INIT)
        dp = rng.normal(0.0, cfg.sigma_p0, 3)
        dv = rng.normal(0.0, cfg.sigma_v0, 3)
        phi = rng.normal(0.0, cfg.sigma_phi0_deg * _DEG, 3)
        # C_hat = exp(-[phi x]) C
        q_hat = quat_multiply(quat_from_rotvec(-phi), tr.q[0])
        x0_hat.append(NominalState(tr.p[0] + dp, tr.v[0] + dv, q_hat))

        range_noise[k] = substream(cfg.seed, run, agent, STREAM_RANGE).standard_normal((n_ep, n_targets))
        loss_draw[k] = substream(cfg.seed, run, agent, STREAM_LOSS).uniform(size=n_ep)

    return World(cfg, run, truth, biases, f_meas, w_meas, x0_hat, P0, range_noise, loss_draw, build_connectivity(n, len(cfg.anchors)))


@dataclass
class EpochBundle:
    """
    Data of one UWB epoch ``e``: the IMU samples since the previous epoch and
    the ranges taken at the epoch time. Ranges are grouped by measuring agent.
    """

    epoch: int
    t: float
    f_b: list[NDArray[np.float64]]
    w_b: list[NDArray[np.float64]]
    dt: NDArray[np.float64]
    anchor_meas: dict[int, list[RangeMeasurement]]
    agent_meas: dict[int, list[RangeMeasurement]]
    offline: frozenset[int]
    center_lost: frozenset[int]

    @property
    def n_measurements(self) -> int:
        return sum(map(len, self.anchor_meas.values())) + sum(map(len, self.agent_meas.values()))


def _module_positions(world: World, k: int) -> NDArray[np.float64]:
    lever = np.asarray(world.config.lever, dtype=float)
    return np.array([tr.p[k] + quat_to_rotmat(tr.q[k]) @ lever for tr in world.truth])


def run_epoch(world: World, e: int, schedule: EventSchedule | None = None) -> EpochBundle:
    """Measurement bundle for epoch ``e`` (1-based; epoch 0 is the initial time)."""
    cfg = world.config
    if not 1 <= e <= cfg.n_epochs:
        raise ValueError(f"epoch {e} outside 1..{cfg.n_epochs}")
    schedule = schedule or EventSchedule()
    spe = cfg.samples_per_epoch
    k = world.truth_index(e)
    t = world.epoch_time(e)
    sl = slice(k - spe, k)
    n = world.n_agents
    ids = range(1, n + 1)

    offline = frozenset(a for a in ids if schedule.is_offline(a, t))
    lost = frozenset(a for a in ids if world.loss_draw[a - 1, e - 1] < schedule.loss_prob(a, t))
    pR = _module_positions(world, k)
    anchors = cfg.anchor_map
    n_anc = len(cfg.anchors)

    anchor_meas: dict[int, list[RangeMeasurement]] = {a: [] for a in ids}
    agent_meas: dict[int, list[RangeMeasurement]] = {a: [] for a in ids}
    for a in ids:
        if a in offline:
            continue
        noise = world.range_noise[a - 1, e - 1]
        for anc in world.connectivity.anchors[a]:
            d = float(np.linalg.norm(pR[a - 1] - anchors[anc])) + cfg.sigma_r * noise[anc - 1]
            anchor_meas[a].append(RangeMeasurement(RangeKind.ANCHOR, a, anc, max(d, 0.0), _sigma(cfg)))
        for j in world.connectivity.neighbors[a]:
            if j in offline:
                continue
            d = float(np.linalg.norm(pR[a - 1] - pR[j - 1])) + cfg.sigma_r * noise[n_anc + j - 1]
            agent_meas[a].append(RangeMeasurement(RangeKind.AGENT, a, j, max(d, 0.0), _sigma(cfg)))

    return EpochBundle(
        e,
        t,
        [fm[sl] for fm in world.f_meas],
        [wm[sl] for wm in world.w_meas],
        np.full(spe, 1.0 / cfg.imu_rate),
        anchor_meas,
        agent_meas,
        offline,
        lost | offline,
    )


def _sigma(cfg: WorldConfig) -> float:
    # filters need a positive noise level even in noiseless closure runs
    return max(cfg.sigma_r, 1e-6)


def dump_world_csv(world: World, out_dir: str | Path, schedule: EventSchedule | None = None) -> None:
    """Truth at UWB epochs (``truth.csv``) and all generated ranges (``ranges.csv``)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = world.config
    with open(out / "truth.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["time", "agent", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz"])
        for e in range(cfg.n_epochs + 1):
            k = world.truth_index(e)
            for a, tr in enumerate(world.truth, start=1):
                wr.writerow([repr(world.epoch_time(e)), a, *map(repr, tr.p[k]), *map(repr, tr.v[k]), *map(repr, tr.q[k])])
    with open(out / "ranges.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["time", "kind", "source", "target", "range"])
        for e in range(1, cfg.n_epochs + 1):
            b = run_epoch(world, e, schedule)
            for group in (b.anchor_meas, b.agent_meas):
                for meas in (m for ms in group.values() for m in ms):
                    wr.writerow([repr(b.t), meas.kind.value, meas.source_id, meas.target_id, repr(meas.d_tilde)])


__all__ = [
    "Accelerate",
    "EightShape",
    "PitchRamp",
    "ConstantVelocity",
    "CircularTurn",
    "DecelerateToHover",
    "InvalidSegment",
    "TruthTrajectory",
    "generate_truth",
    "ImuBiases",
    "corrupt_imu",
    "corrupt_imu_series",
    "ConnectivityMap",
    "build_connectivity",
    "PacketLoss",
    "Offline",
    "Rejoin",
    "EventSchedule",
    "WorldConfig",
    "World",
    "build_world",
    "EpochBundle",
    "run_epoch",
    "dump_world_csv",
    "default_segments",
    "truncate_segments",
    "substream",
    "N_ERR",
]
