"""
INI scenario files.

Example (all keys optional; omitted keys take the defaults shown by
``wcidcl default-config``)::

    [world]
    n_agents = 8
    anchors = 100 100 0; -100 100 100; -100 -100 0; 100 -100 100
    lever = 0.1 0 0.1

    [imu]
    gyro_bias_deg_h = 300

    [trajectory]
    segments = accelerate 0.4 10; eight 26; cv 20

    [experiment]
    methods = ekf, wci
    events = 30 packet_loss 1 0.05; 90 offline 1; 110 rejoin 1

Errors carry the line number of the offending key.
"""

from __future__ import annotations

import configparser
import io
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable

from .ins import ImuNoiseModel
from .simworld import (
    Accelerate,
    CircularTurn,
    ConstantVelocity,
    DecelerateToHover,
    EightShape,
    EventSchedule,
    InvalidSegment,
    Offline,
    PacketLoss,
    PitchRamp,
    Rejoin,
    TrajectorySegment,
    WorldConfig,
)

METHODS = ("ncl", "ekf", "ci-trace", "ci-det", "wci")
UPDATE_MODES = ("concurrent", "sequential")
MISSING_IMU_POLICIES = ("hold", "hover")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")


@dataclass
class ExperimentSpec:
    world: WorldConfig = field(default_factory=WorldConfig)
    methods: tuple[str, ...] = METHODS
    schedule: EventSchedule = field(default_factory=EventSchedule)
    out: Path = Path("out")
    update_mode: str = "concurrent"
    skip_transient: float = 0.0
    missing_imu: str = "hold"

    def validate(self) -> None:
        try:
            self.world.validate()
            self.schedule.validate(self.world.duration, self.world.n_agents)
        except (ValueError, InvalidSegment) as exc:
            raise ConfigError(str(exc)) from exc
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if self.update_mode not in UPDATE_MODES:
            raise ConfigError(f"update_mode must be one of {UPDATE_MODES}")
        if self.missing_imu not in MISSING_IMU_POLICIES:
            raise ConfigError(f"missing_imu must be one of {MISSING_IMU_POLICIES}")
        if self.skip_transient < 0:
            raise ConfigError("skip_transient must be non-negative")


# -- value codecs --------------------------------------------------------------


def _floats(text: str, n: int | None = None) -> tuple[float, ...]:
    vals = tuple(float(v) for v in text.replace(",", " ").split())
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} numbers, got {len(vals)}")
    return vals


def _fmt(x: float) -> str:
    return repr(float(x))


_SEGMENTS: dict[str, tuple[type, int]] = {
    "accelerate": (Accelerate, 2),
    "eight": (EightShape, 1),
    "pitch": (PitchRamp, 2),
    "cv": (ConstantVelocity, 1),
    "turn": (CircularTurn, 2),
    "hover": (DecelerateToHover, 1),
}
_SEGMENT_NAMES = {cls: name for name, (cls, _) in _SEGMENTS.items()}


def parse_segments(text: str) -> list[TrajectorySegment]:
    out = []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        name, *args = item.split()
        if name not in _SEGMENTS:
            raise ValueError(f"unknown segment {name!r}; choose from {', '.join(_SEGMENTS)}")
        cls, nargs = _SEGMENTS[name]
        if len(args) != nargs:
            raise ValueError(f"segment {name!r} takes {nargs} number(s)")
        out.append(cls(*map(float, args)))
    if not out:
        raise ValueError("trajectory needs at least one segment")
    return out


def format_segments(segments) -> str:
    return "; ".join(" ".join([_SEGMENT_NAMES[type(s)], *(_fmt(getattr(s, f.name)) for f in fields(s))]) for s in segments)


def parse_events(text: str) -> EventSchedule:
    events = []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        parts = item.split()
        if len(parts) < 3:
            raise ValueError(f"bad event {item!r}; expected '<time> <kind> <agent> [prob]'")
        t, kind, agent = float(parts[0]), parts[1], int(parts[2])
        if kind == "packet_loss" and len(parts) == 4:
            events.append((t, PacketLoss(agent, float(parts[3]))))
        elif kind == "offline" and len(parts) == 3:
            events.append((t, Offline(agent)))
        elif kind == "rejoin" and len(parts) == 3:
            events.append((t, Rejoin(agent)))
        else:
            raise ValueError(f"bad event {item!r}; kinds are packet_loss <agent> <prob>, offline <agent>, rejoin <agent>")
    return EventSchedule(events)


def format_events(schedule: EventSchedule) -> str:
    items = []
    for t, ev in schedule.events:
        if isinstance(ev, PacketLoss):
            items.append(f"{_fmt(t)} packet_loss {ev.agent} {_fmt(ev.prob)}")
        else:
            items.append(f"{_fmt(t)} {'offline' if isinstance(ev, Offline) else 'rejoin'} {ev.agent}")
    return "; ".join(items)


# -- schema --------------------------------------------------------------------

_WORLD_KEYS: dict[str, Callable[[str], object]] = {
    "n_agents": int,
    "anchors": lambda s: tuple(_floats(a, 3) for a in s.split(";") if a.strip()),
    "sigma_r": float,
    "f_uwb": float,
    "lever": lambda s: _floats(s, 3),
    "sigma_p0": float,
    "sigma_v0": float,
    "sigma_phi0_deg": float,
    "t_a": float,
    "n_sim": int,
    "imu_rate": float,
    "seed": int,
    "start_box": lambda s: _floats(s, 3),
}
_IMU_KEYS = ("gyro_arw_deg_sqrt_h", "accel_vrw_mps_sqrt_h", "gyro_bias_deg_h", "accel_bias_ug", "gravity")
_EXPERIMENT_KEYS = ("methods", "update_mode", "skip_transient", "out", "events", "missing_imu")
_SECTIONS = {
    "world": tuple(_WORLD_KEYS),
    "imu": _IMU_KEYS,
    "trajectory": ("segments",),
    "experiment": _EXPERIMENT_KEYS,
}


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    """Line number of every ``key = value`` per section."""
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip().lower()
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None and not raw[:1].isspace():
            lines[(section, m.group(1).strip().lower())] = no
    return lines


def _imu_to_datasheet(noise: ImuNoiseModel) -> dict[str, float]:
    import math

    deg = math.pi / 180.0
    return {
        "gyro_arw_deg_sqrt_h": noise.gyro_arw * 60.0 / deg,
        "accel_vrw_mps_sqrt_h": noise.accel_vrw * 60.0,
        "gyro_bias_deg_h": noise.gyro_bias_sigma0 * 3600.0 / deg,
        "accel_bias_ug": noise.accel_bias_sigma0 / (1e-6 * noise.gravity) if noise.gravity else 0.0,
        "gravity": noise.gravity,
    }


def parse_config(text: str, source: str = "<config>") -> ExperimentSpec:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(getattr(exc, "message", str(exc)).splitlines()[0], getattr(exc, "lineno", None), source) from exc
    lines = _key_lines(text)

    for sec in cp.sections():
        if sec.lower() not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]", None, source)
        for key in cp[sec]:
            if key not in _SECTIONS[sec.lower()]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", lines.get((sec.lower(), key)), source)

    def get(sec, key, conv):
        raw = cp.get(sec, key)
        try:
            return conv(raw)
        except (ValueError, InvalidSegment) as exc:
            raise ConfigError(f"[{sec}] {key}: {exc}", lines.get((sec, key)), source) from exc

    default = WorldConfig()
    kw = {}
    if cp.has_section("world"):
        for key, conv in _WORLD_KEYS.items():
            if cp.has_option("world", key):
                kw["T_a" if key == "t_a" else key] = get("world", key, conv)

    imu = _imu_to_datasheet(default.imu_noise)
    if cp.has_section("imu"):
        for key in _IMU_KEYS:
            if cp.has_option("imu", key):
                imu[key] = get("imu", key, float)
    try:
        kw["imu_noise"] = ImuNoiseModel.from_datasheet_units(**imu)
    except ValueError as exc:
        raise ConfigError(f"[imu] {exc}", None, source) from exc
    if cp.has_option("trajectory", "segments"):
        kw["segments"] = get("trajectory", "segments", parse_segments)
    world = WorldConfig(**kw)

    spec = ExperimentSpec(world=world)
    if cp.has_section("experiment"):
        if cp.has_option("experiment", "methods"):
            spec.methods = get("experiment", "methods", lambda s: tuple(m.strip() for m in s.split(",") if m.strip()))
        if cp.has_option("experiment", "update_mode"):
            spec.update_mode = cp.get("experiment", "update_mode").strip()
        if cp.has_option("experiment", "skip_transient"):
            spec.skip_transient = get("experiment", "skip_transient", float)
        if cp.has_option("experiment", "out"):
            spec.out = Path(cp.get("experiment", "out").strip())
        if cp.has_option("experiment", "events"):
            spec.schedule = get("experiment", "events", parse_events)
        if cp.has_option("experiment", "missing_imu"):
            spec.missing_imu = cp.get("experiment", "missing_imu").strip()

    try:
        spec.validate()
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], None, source) from exc
    return spec


def load_config(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from exc
    return parse_config(text, str(path))


def format_config(spec: ExperimentSpec) -> str:
    w = spec.world
    cp = configparser.ConfigParser(interpolation=None)
    cp["world"] = {
        "n_agents": str(w.n_agents),
        "anchors": "; ".join(" ".join(map(_fmt, a)) for a in w.anchors),
        "sigma_r": _fmt(w.sigma_r),
        "f_uwb": _fmt(w.f_uwb),
        "lever": " ".join(map(_fmt, w.lever)),
        "sigma_p0": _fmt(w.sigma_p0),
        "sigma_v0": _fmt(w.sigma_v0),
        "sigma_phi0_deg": _fmt(w.sigma_phi0_deg),
        "t_a": _fmt(w.T_a),
        "n_sim": str(w.n_sim),
        "imu_rate": _fmt(w.imu_rate),
        "seed": str(w.seed),
        "start_box": " ".join(map(_fmt, w.start_box)),
    }
    cp["imu"] = {k: _fmt(v) for k, v in _imu_to_datasheet(w.imu_noise).items()}
    cp["trajectory"] = {"segments": format_segments(w.segments)}
    cp["experiment"] = {
        "methods": ", ".join(spec.methods),
        "update_mode": spec.update_mode,
        "skip_transient": _fmt(spec.skip_transient),
        "out": str(spec.out),
        "events": format_events(spec.schedule),
        "missing_imu": spec.missing_imu,
    }
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
