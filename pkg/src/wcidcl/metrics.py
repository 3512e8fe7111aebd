"""
Monte-Carlo error statistics over run logs.

Arrays follow the layout ``(runs, epochs, agents, ...)``. ``rmse``,
``std_metric`` and ``nees`` reduce over the leading run axis only, so any
trailing epoch/agent axes are kept.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .ci_fusion import SingularCovariance
from .ins import GRAVITY, N_ERR


class Component(Enum):
    POSITION = ("position", 0, 1.0)
    VELOCITY = ("velocity", 3, 1.0)
    ATTITUDE = ("attitude", 6, 180.0 / math.pi)
    GYRO_BIAS = ("gyro_bias", 9, 180.0 / math.pi * 3600.0)
    ACCEL_BIAS = ("accel_bias", 12, 1.0 / (1e-6 * GRAVITY))

    def __init__(self, label: str, start: int, scale: float):
        self.label = label
        self.indices = slice(start, start + 3)
        # SI -> reporting unit (m, m/s, deg, deg/h, micro-g)
        self.scale = scale

    @property
    def unit(self) -> str:
        return {"position": "m", "velocity": "m/s", "attitude": "deg", "gyro_bias": "deg/h", "accel_bias": "ug"}[
            self.label
        ]

    @classmethod
    def from_label(cls, label: str) -> Component:
        for c in cls:
            if c.label == label:
                return c
        raise KeyError(label)


COMPONENTS = tuple(Component)


def rmse(errors: ArrayLike, sel: Component) -> NDArray[np.float64] | float:
    """Root of the run-mean squared error norm on the selected indices."""
    e = np.asarray(errors, dtype=float)[..., sel.indices]
    return np.sqrt(np.mean(np.sum(e * e, axis=-1), axis=0))


def std_metric(P: ArrayLike, sel: Component) -> NDArray[np.float64] | float:
    """Root of the run-mean trace of the selected covariance block."""
    P = np.asarray(P, dtype=float)
    i = sel.indices
    return np.sqrt(np.mean(np.trace(P[..., i, i], axis1=-2, axis2=-1), axis=0))


def nees(errors: ArrayLike, P: ArrayLike, sel: Component) -> NDArray[np.float64] | float:
    """Run-mean normalized estimation error squared on the selected block."""
    i = sel.indices
    e = np.asarray(errors, dtype=float)[..., i]
    Ps = np.asarray(P, dtype=float)[..., i, i]
    try:
        sol = np.linalg.solve(Ps, e[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(str(exc)) from exc
    return np.mean(np.sum(e * sol, axis=-1), axis=0)


def correlation_matrix(P: ArrayLike) -> NDArray[np.float64]:
    P = np.asarray(P, dtype=float)
    d = np.sqrt(np.diagonal(P, axis1=-2, axis2=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = P / (d[..., :, None] * d[..., None, :])
    return np.nan_to_num(rho)


def correlation_gap(P_nominal: ArrayLike, P_actual: ArrayLike) -> NDArray[np.float64]:
    """Element-wise ``|rho_nominal - rho_actual|``; leading axes are averaged out."""
    gap = np.abs(correlation_matrix(P_nominal) - correlation_matrix(P_actual))
    n = gap.shape[-1]
    return gap.reshape(-1, n, n).mean(axis=0)


def mc_correlation_gap(errors: ArrayLike, P: ArrayLike) -> NDArray[np.float64]:
    """
    Correlation gap with the actual covariance estimated from the errors.

    ``errors`` is ``(runs, epochs, n)`` and ``P`` is ``(runs, epochs, n, n)``
    for one agent. The nominal covariance is the run-mean of ``P`` and the
    actual one the run-mean second moment of the errors, per epoch.
    """
    e = np.asarray(errors, dtype=float)
    actual = np.einsum("rki,rkj->kij", e, e) / e.shape[0]
    nominal = np.mean(np.asarray(P, dtype=float), axis=0)
    return correlation_gap(nominal, actual)


@dataclass
class RunLog:
    """
    Per-epoch, per-agent record of one filter run.

    ``trace_delta[k, a, c]`` is the change of the covariance trace of
    component ``c`` caused by the correlated update (NaN when none happened).
    """

    method: str
    times: NDArray[np.float64]
    errors: NDArray[np.float64]  # (epochs, agents, 15)
    P: NDArray[np.float64]  # (epochs, agents, 15, 15)
    omega: NDArray[np.float64]  # (epochs, agents)
    trace_delta: NDArray[np.float64]  # (epochs, agents, 5)
    skipped: NDArray[np.int64] = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        n_ep = len(self.times)
        for name in ("errors", "P", "omega", "trace_delta"):
            if getattr(self, name).shape[0] != n_ep:
                raise ValueError(f"{name} is not aligned with the time stamps")

    @property
    def n_agents(self) -> int:
        return self.errors.shape[1]


def stack_runs(logs: Sequence[RunLog]) -> tuple[NDArray, NDArray, NDArray]:
    """``(times, errors, P)`` with a leading run axis."""
    if not logs:
        raise ValueError("no runs to aggregate")
    t = logs[0].times
    for log in logs[1:]:
        if not np.array_equal(log.times, t):
            raise ValueError("run logs have different time stamps")
    return t, np.stack([log.errors for log in logs]), np.stack([log.P for log in logs])


@dataclass(frozen=True)
class ComponentStats:
    rmse: float
    std: float
    nees: float


def time_series(logs: Sequence[RunLog], sel: Component) -> tuple[NDArray, NDArray, NDArray, NDArray]:
    """Per-epoch, per-agent ``(times, rmse, std, nees)`` in reporting units (NEES unitless)."""
    t, e, P = stack_runs(logs)
    return t, rmse(e, sel) * sel.scale, std_metric(P, sel) * sel.scale, nees(e, P, sel)


def summarize(
    logs: Sequence[RunLog],
    skip_transient: float = 0.0,
    window: tuple[float, float] | None = None,
) -> dict[Component, dict[str, ComponentStats]]:
    """
    Time-averaged statistics for agent 1 and for the mean over the other agents.

    ``window`` restricts the averaging to ``[t0, t1]``; otherwise epochs
    before ``skip_transient`` seconds are dropped.
    """
    out = {}
    for sel in COMPONENTS:
        t, r, s, n = time_series(logs, sel)
        mask = (t >= window[0]) & (t <= window[1]) if window else t >= skip_transient
        if not mask.any():
            raise ValueError("averaging window contains no epoch")
        groups = {"agent1": [0], "others": list(range(1, r.shape[1])) or [0]}
        out[sel] = {
            g: ComponentStats(
                float(r[mask][:, idx].mean()), float(s[mask][:, idx].mean()), float(n[mask][:, idx].mean())
            )
            for g, idx in groups.items()
        }
    return out


def format_summary(summaries: dict[str, dict[Component, dict[str, ComponentStats]]]) -> str:
    """Text table: one row per method and agent group, RMSE/STD/NEES per component."""
    head = f"{'method':<10}{'agents':<8}" + "".join(f"{c.label + ' [' + c.unit + ']':>33}" for c in COMPONENTS)
    sub = " " * 18 + "".join(f"{'RMSE':>11}{'STD':>11}{'NEES':>11}" for _ in COMPONENTS)
    lines = [head, sub]
    for group, label in (("agent1", "1"), ("others", "2-N")):
        for method, summ in summaries.items():
            cells = "".join(
                f"{summ[c][group].rmse:>11.4g}{summ[c][group].std:>11.4g}{summ[c][group].nees:>11.4g}" for c in COMPONENTS
            )
            lines.append(f"{method:<10}{label:<8}{cells}")
    return "\n".join(lines)


# -- persistence ---------------------------------------------------------------

TIMESERIES_HEADER = ("time", "agent", "method", "component", "rmse", "std", "nees")
TRACE_DELTA_HEADER = ("time", "agent", "component", "delta")
CORRGAP_HEADER = ("row", "col", "gap")


def timeseries_rows(method: str, logs: Sequence[RunLog]) -> Iterable[tuple]:
    per_comp = {sel: time_series(logs, sel) for sel in COMPONENTS}
    t = per_comp[Component.POSITION][0]
    n_agents = logs[0].n_agents
    for k in range(len(t)):
        for a in range(n_agents):
            for sel in COMPONENTS:
                _, r, s, n = per_comp[sel]
                yield (repr(float(t[k])), a + 1, method, sel.label, repr(float(r[k, a])), repr(float(s[k, a])), repr(float(n[k, a])))


def write_timeseries(path: str | Path, results: dict[str, Sequence[RunLog]]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(TIMESERIES_HEADER)
        for method, logs in results.items():
            wr.writerows(timeseries_rows(method, logs))


def write_trace_delta(path: str | Path, log: RunLog) -> None:
    """Trace changes of one run in reporting units squared."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(TRACE_DELTA_HEADER)
        for k, t in enumerate(log.times):
            for a in range(log.n_agents):
                for c, sel in enumerate(COMPONENTS):
                    d = log.trace_delta[k, a, c]
                    if np.isfinite(d):
                        wr.writerow((repr(float(t)), a + 1, sel.label, repr(float(d * sel.scale**2))))


def write_corrgap(path: str | Path, gap: NDArray[np.float64]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CORRGAP_HEADER)
        for i in range(gap.shape[0]):
            for j in range(gap.shape[1]):
                wr.writerow((i, j, repr(float(gap[i, j]))))


def read_timeseries(path: str | Path) -> dict[tuple[str, str, int], NDArray[np.float64]]:
    """``(method, component, agent) -> (epochs, 4)`` array of ``time, rmse, std, nees``."""
    out: dict[tuple[str, str, int], list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["method"], row["component"], int(row["agent"]))
            out.setdefault(key, []).append([float(row[k]) for k in ("time", "rmse", "std", "nees")])
    return {k: np.array(v) for k, v in out.items()}


__all__ = [
    "Component",
    "COMPONENTS",
    "rmse",
    "std_metric",
    "nees",
    "correlation_matrix",
    "correlation_gap",
    "mc_correlation_gap",
    "RunLog",
    "ComponentStats",
    "stack_runs",
    "time_series",
    "summarize",
    "format_summary",
    "write_timeseries",
    "write_trace_delta",
    "write_corrgap",
    "read_timeseries",
    "N_ERR",
]
