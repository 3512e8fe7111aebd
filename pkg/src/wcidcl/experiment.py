"""
Scenario drivers: run one method over one realized world and log the result.

Method names: ``ncl`` (no cooperation), ``ekf`` (centralized joint EKF),
``ci-trace``, ``ci-det`` and ``wci`` (distributed).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Sequence

import numpy as np

from .ccl_center import JointFilter, joint_predict, joint_update
from .dcl_agent import (
    AgentFilter,
    FusionMethod,
    correlated_update,
    independent_update,
    make_broadcast,
    predict_block,
    sequential_correlated_update,
)
from .ins import N_ERR
from .metrics import COMPONENTS, RunLog
from .ranging import build_agent_batch, build_anchor_batch
from .simworld import EpochBundle, EventSchedule, World, WorldConfig, build_world, run_epoch

DCL_METHODS = {
    "ncl": FusionMethod.NO_COOPERATION,
    "ci-trace": FusionMethod.CI_TRACE,
    "ci-det": FusionMethod.CI_DET,
    "wci": FusionMethod.WCI,
}
METHODS = ("ncl", "ekf", "ci-trace", "ci-det", "wci")
UPDATE_MODES = ("concurrent", "sequential")


def _component_traces(P: np.ndarray) -> np.ndarray:
    d = np.diag(P)
    return np.array([d[c.indices].sum() for c in COMPONENTS])


def _empty_log(method: str, world: World):
    n_ep, n = world.config.n_epochs, world.n_agents
    times = np.array([world.epoch_time(e) for e in range(n_ep + 1)])
    errors = np.empty((n_ep + 1, n, N_ERR))
    P = np.empty((n_ep + 1, n, N_ERR, N_ERR))
    omega = np.full((n_ep + 1, n), np.nan)
    delta = np.full((n_ep + 1, n, len(COMPONENTS)), np.nan)
    for a in range(n):
        errors[0, a] = world.true_error(a + 1, 0, world.x0_hat[a])
        P[0, a] = world.P0
    return RunLog(method, times, errors, P, omega, delta, np.zeros(n, dtype=np.int64))


def run_dcl(
    world: World,
    method: str,
    schedule: EventSchedule | None = None,
    update_mode: str = "concurrent",
    T_a: float | None = None,
    bundles: Sequence[EpochBundle] | None = None,
) -> RunLog:
    """
    Distributed (or non-cooperative) localization over the whole world.

    ``bundles`` may hold the epochs already simulated with ``schedule``.
    """
    cfg = world.config
    fusion = DCL_METHODS[method]
    sequential = _check_mode(update_mode)
    T_a = cfg.T_a if T_a is None else T_a
    anchors = cfg.anchor_map
    lever = np.asarray(cfg.lever, dtype=float)
    filters = [
        AgentFilter(a + 1, world.x0_hat[a].copy(), world.P0.copy(), lever, fusion, T_a, cfg.imu_noise)
        for a in range(world.n_agents)
    ]
    log = _empty_log(method, world)

    for e in range(1, cfg.n_epochs + 1):
        b = run_epoch(world, e, schedule) if bundles is None else bundles[e - 1]
        filters = [predict_block(f, b.f_b[a], b.w_b[a], b.dt) for a, f in enumerate(filters)]
        # neighbours' post-prediction, pre-update values
        infos = {f.id: make_broadcast(f) for f in filters if f.id not in b.offline}

        for a, f in enumerate(filters):
            anc = b.anchor_meas[f.id]
            if sequential:
                for m in anc:
                    f = independent_update(f, build_anchor_batch(f.x_hat, lever, anchors, [m]))
            else:
                f = independent_update(f, build_anchor_batch(f.x_hat, lever, anchors, anc))

            agt = b.agent_meas[f.id]
            if agt and fusion is not FusionMethod.NO_COOPERATION:
                before = _component_traces(f.P)
                if sequential:
                    f = sequential_correlated_update(f, infos, agt)
                else:
                    f = correlated_update(f, build_agent_batch(f.x_hat, lever, infos, agt))
                log.trace_delta[e, a] = _component_traces(f.P) - before
                log.omega[e, a] = f.last_omega
            filters[a] = f

        k = world.truth_index(e)
        for a, f in enumerate(filters):
            log.errors[e, a] = world.true_error(f.id, k, f.x_hat)
            log.P[e, a] = f.P
    log.skipped[:] = [f.skipped_updates for f in filters]
    return log


def run_ccl(
    world: World,
    schedule: EventSchedule | None = None,
    update_mode: str = "concurrent",
    missing_imu: str = "hold",
    bundles: Sequence[EpochBundle] | None = None,
) -> RunLog:
    """
    Centralized joint EKF. Data of agents that failed to reach the center
    (packet loss or offline) is missing for that epoch; the center then holds
    their last IMU sample or, with ``missing_imu="hover"``, assumes hover.
    """
    cfg = world.config
    sequential = _check_mode(update_mode)
    n = world.n_agents
    jf = JointFilter.from_filters(world.x0_hat, [world.P0] * n, cfg.lever, cfg.imu_noise)
    anchors = cfg.anchor_map
    log = _empty_log("ekf", world)

    for e in range(1, cfg.n_epochs + 1):
        b = run_epoch(world, e, schedule) if bundles is None else bundles[e - 1]
        imu = [None if a + 1 in b.center_lost else (b.f_b[a], b.w_b[a]) for a in range(n)]
        jf = joint_predict(jf, imu, b.dt, missing_imu)

        meas = []
        for a in range(1, n + 1):
            if a in b.center_lost:
                continue
            meas += b.anchor_meas[a]
            meas += b.agent_meas[a]
        before = [_component_traces(jf.block(a)) for a in range(1, n + 1)]
        jf = joint_update(jf, anchors, meas, sequential=sequential)

        k = world.truth_index(e)
        for a in range(n):
            log.errors[e, a] = world.true_error(a + 1, k, jf.x_hat[a])
            log.P[e, a] = jf.block(a + 1)
            log.trace_delta[e, a] = _component_traces(log.P[e, a]) - before[a]
    return log


def _check_mode(mode: str) -> bool:
    if mode not in UPDATE_MODES:
        raise ValueError(f"update mode must be one of {UPDATE_MODES}, got {mode!r}")
    return mode == "sequential"


def run_method(
    world: World,
    method: str,
    schedule: EventSchedule | None = None,
    update_mode: str = "concurrent",
    T_a: float | None = None,
    missing_imu: str = "hold",
) -> RunLog:
    if method == "ekf":
        return run_ccl(world, schedule, update_mode, missing_imu)
    if method not in DCL_METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    return run_dcl(world, method, schedule, update_mode, T_a)


def _run_one(args):
    cfg, run, methods, schedule, update_mode, T_a, missing_imu = args
    world = build_world(cfg, run)
    return {m: run_method(world, m, schedule, update_mode, T_a, missing_imu) for m in methods}


def monte_carlo(
    cfg: WorldConfig,
    methods: Sequence[str],
    n_runs: int | None = None,
    schedule: EventSchedule | None = None,
    update_mode: str = "concurrent",
    T_a: float | None = None,
    jobs: int = 1,
    missing_imu: str = "hold",
) -> dict[str, list[RunLog]]:
    """
    ``n_runs`` seeded runs of every method. All methods of one run share the
    same world, so differences between methods are not sampling noise.
    """
    n_runs = cfg.n_sim if n_runs is None else n_runs
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {METHODS}")
    if schedule is not None:
        schedule.validate(cfg.duration, cfg.n_agents)
    tasks = [(cfg, r, tuple(methods), schedule, update_mode, T_a, missing_imu) for r in range(n_runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            per_run = list(ex.map(_run_one, tasks))
    else:
        per_run = [_run_one(t) for t in tasks]
    return {m: [res[m] for res in per_run] for m in methods}


def with_overrides(cfg: WorldConfig, **kw) -> WorldConfig:
    return replace(cfg, **kw)
