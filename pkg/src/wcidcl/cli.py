"""
Command-line front end.

    wcidcl run          Monte-Carlo runs of the selected methods, CSVs and a summary table
    wcidcl sweep-ta     WCI over a list of T_a values
    wcidcl robustness   packet loss from 30 s, agent 1 offline 90-110 s, against a no-event baseline
    wcidcl bench        processing time of DCL and CCL against swarm size
    wcidcl update-mode  concurrent against sequential updates
    wcidcl default-config

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
import timeit
from dataclasses import replace
from functools import partial
from pathlib import Path
from typing import Sequence

import numpy as np

from .ci_fusion import SingularCovariance
from .config import ConfigError, ExperimentSpec, format_config, load_config
from .experiment import monte_carlo, run_ccl, run_dcl
from .metrics import (
    COMPONENTS,
    Component,
    format_summary,
    mc_correlation_gap,
    stack_runs,
    summarize,
    time_series,
    write_corrgap,
    write_timeseries,
    write_trace_delta,
)
from .ranging import DegenerateGeometry
from .simworld import EventSchedule, build_world, dump_world_csv, run_epoch, truncate_segments

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _csv_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _float_list(text: str) -> list[float]:
    return [float(s) for s in _csv_list(text)]


def _int_list(text: str) -> list[int]:
    return [int(s) for s in _csv_list(text)]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI scenario file (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="base seed, overrides the config")
    common.add_argument("--methods", type=_csv_list, help="comma list of ncl, ekf, ci-trace, ci-det, wci")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--runs", type=int, help="number of Monte-Carlo runs")
    common.add_argument("--skip-transient", type=float, help="seconds dropped from time averages")
    common.add_argument("--update-mode", choices=("concurrent", "sequential"))
    common.add_argument("--jobs", type=int, default=1, help="worker processes for Monte-Carlo runs")

    p = argparse.ArgumentParser(prog="wcidcl", description="Distributed cooperative localization workbench")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", parents=[common], help="Monte-Carlo evaluation of the selected methods")
    r.add_argument("--dump-world", action="store_true", help="also write truth.csv and ranges.csv of run 0")
    s = sub.add_parser("sweep-ta", parents=[common], help="WCI over several T_a values")
    s.add_argument("--ta", type=_float_list, default=[1.0, 5.0, 20.0], help="comma list of T_a [s]")
    sub.add_parser("robustness", parents=[common], help="packet loss and offline/rejoin scenario")
    b = sub.add_parser("bench", parents=[common], help="processing time against swarm size")
    b.add_argument("--sizes", type=_int_list, default=[4, 8, 16, 32], help="comma list of swarm sizes")
    b.add_argument("--duration", type=float, default=10.0, help="trajectory length [s]")
    sub.add_parser("update-mode", parents=[common], help="concurrent against sequential updates")
    sub.add_parser("default-config", help="print the default configuration")
    return p


def resolve_spec(args: argparse.Namespace) -> ExperimentSpec:
    spec = load_config(args.config) if args.config else ExperimentSpec()
    world = spec.world
    if args.seed is not None:
        world = replace(world, seed=args.seed)
    if args.runs is not None:
        world = replace(world, n_sim=args.runs)
    spec = replace(spec, world=world)
    if args.methods is not None:
        spec.methods = tuple(args.methods)
    if args.out is not None:
        spec.out = args.out
    if args.skip_transient is not None:
        spec.skip_transient = args.skip_transient
    if args.update_mode is not None:
        spec.update_mode = args.update_mode
    spec.validate()
    return spec


def _write_method_outputs(out: Path, results) -> None:
    for method, logs in results.items():
        d = out / method
        d.mkdir(parents=True, exist_ok=True)
        write_trace_delta(d / "trace_delta.csv", logs[0])
        if method != "ncl":
            _, e, P = stack_runs(logs)
            # agent 1, all epochs after the initial one
            write_corrgap(d / "corrgap.csv", mc_correlation_gap(e[:, 1:, 0], P[:, 1:, 0]))


def cmd_run(spec: ExperimentSpec, jobs: int = 1, dump_world: bool = False) -> int:
    results = monte_carlo(
        spec.world, spec.methods, schedule=spec.schedule, update_mode=spec.update_mode, jobs=jobs, missing_imu=spec.missing_imu
    )
    spec.out.mkdir(parents=True, exist_ok=True)
    write_timeseries(spec.out / "timeseries.csv", results)
    _write_method_outputs(spec.out, results)
    if dump_world:
        dump_world_csv(build_world(spec.world, 0), spec.out, spec.schedule)
    table = format_summary({m: summarize(logs, spec.skip_transient) for m, logs in results.items()})
    (spec.out / "summary.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def cmd_sweep_ta(spec: ExperimentSpec, ta_values: Sequence[float], jobs: int = 1) -> int:
    spec.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for ta in ta_values:
        if ta < 0:
            raise ConfigError("T_a values must be non-negative")
        logs = monte_carlo(spec.world, ["wci"], update_mode=spec.update_mode, T_a=ta, jobs=jobs)["wci"]
        summ = summarize(logs, spec.skip_transient)
        for c in COMPONENTS:
            for g in ("agent1", "others"):
                st = summ[c][g]
                rows.append((repr(float(ta)), c.label, g, repr(st.rmse), repr(st.std), repr(st.nees)))
        print(f"T_a = {ta:g} s: " + ", ".join(f"{c.label} STD {summ[c]['others'].std:.4g} {c.unit}" for c in COMPONENTS))
    with open(spec.out / "sweep_ta.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("T_a", "component", "agents", "rmse", "std", "nees"))
        wr.writerows(rows)
    return EXIT_OK


def position_rmse_series(logs) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(times, agent-1 RMSE, mean RMSE of the other agents)`` of the position."""
    t, r, _, _ = time_series(logs, Component.POSITION)
    others = r[:, 1:].mean(axis=1) if r.shape[1] > 1 else r[:, 0]
    return t, r[:, 0], others


def cmd_robustness(spec: ExperimentSpec, jobs: int = 1) -> int:
    schedule = spec.schedule if spec.schedule.events else EventSchedule.robustness()
    methods = [m for m in spec.methods if m != "ncl"]
    base = monte_carlo(spec.world, methods, update_mode=spec.update_mode, jobs=jobs)
    events = monte_carlo(
        spec.world, methods, schedule=schedule, update_mode=spec.update_mode, jobs=jobs, missing_imu=spec.missing_imu
    )
    spec.out.mkdir(parents=True, exist_ok=True)
    with open(spec.out / "robustness.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("time", "method", "scenario", "agents", "position_rmse"))
        for label, res in (("baseline", base), ("events", events)):
            for m in methods:
                t, a1, oth = position_rmse_series(res[m])
                for k in range(len(t)):
                    wr.writerow((repr(float(t[k])), m, label, "agent1", repr(float(a1[k]))))
                    wr.writerow((repr(float(t[k])), m, label, "others", repr(float(oth[k]))))
    print(f"{'method':<10}{'window':>12}{'base 2-N':>12}{'events 2-N':>12}{'base 1':>12}{'events 1':>12}")
    for m in methods:
        t, b1, bo = position_rmse_series(base[m])
        _, e1, eo = position_rmse_series(events[m])
        for lo, hi in ((30.0, 90.0), (90.0, 110.0), (30.0, t[-1])):
            sel = (t >= lo) & (t <= hi)
            if not sel.any():
                continue
            print(f"{m:<10}{f'{lo:g}-{hi:g} s':>12}{bo[sel].mean():>12.4g}{eo[sel].mean():>12.4g}{b1[sel].mean():>12.4g}{e1[sel].mean():>12.4g}")
    return EXIT_OK


def loglog_slope(sizes: Sequence[float], seconds: Sequence[float]) -> float:
    return float(np.polyfit(np.log(sizes), np.log(seconds), 1)[0])


def bench(spec: ExperimentSpec, sizes: Sequence[int], duration: float, dcl_method: str = "wci", repeats: int = 1):
    """
    ``{method: [seconds per size]}`` for the distributed method and the
    central EKF. Each entry is the best of ``repeats`` timings; repeats cycle
    over all sizes so slow drift of the machine hits every size alike.
    """
    segments = truncate_segments(spec.world.segments, duration)
    # compile the jitted kernels before timing anything
    warm = build_world(replace(spec.world, n_agents=2, segments=truncate_segments(segments, 0.4)), 0)
    run_dcl(warm, dcl_method, update_mode=spec.update_mode)
    run_ccl(warm, update_mode=spec.update_mode)
    jobs = []
    for n in sizes:
        world = build_world(replace(spec.world, n_agents=n, segments=segments), 0)
        # measurement simulation is shared and stays out of the timings
        bundles = [run_epoch(world, e) for e in range(1, world.config.n_epochs + 1)]
        jobs.append(
            {
                "dcl": partial(run_dcl, world, dcl_method, update_mode=spec.update_mode, bundles=bundles),
                "ccl": partial(run_ccl, world, update_mode=spec.update_mode, bundles=bundles),
            }
        )
    best = np.full((2, len(sizes)), np.inf)
    for _ in range(repeats):
        for i, runs in enumerate(jobs):
            for k, fn in enumerate(runs.values()):
                best[k, i] = min(best[k, i], timeit.timeit(fn, number=1))
    times = {"dcl": best[0].tolist(), "ccl": best[1].tolist()}
    return times


def cmd_bench(spec: ExperimentSpec, sizes: Sequence[int], duration: float) -> int:
    if not sizes or min(sizes) < 1:
        raise ConfigError("swarm sizes must be positive")
    times = bench(spec, sizes, duration, repeats=3)
    spec.out.mkdir(parents=True, exist_ok=True)
    with open(spec.out / "bench.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("n_agents", "method", "seconds"))
        for m, ts in times.items():
            for n, s in zip(sizes, ts):
                wr.writerow((n, m, repr(s)))
    for m, ts in times.items():
        line = ", ".join(f"N={n}: {s:.3f}s" for n, s in zip(sizes, ts))
        slope = f"  log-log slope {loglog_slope(sizes, ts):.2f}" if len(sizes) > 1 else ""
        print(f"{m.upper()}: {line}{slope}")
    return EXIT_OK


def cmd_update_mode(spec: ExperimentSpec, jobs: int = 1) -> int:
    methods = spec.methods if spec.methods != ExperimentSpec().methods else ("ekf", "wci")
    spec.out.mkdir(parents=True, exist_ok=True)
    rows = []
    for mode in ("concurrent", "sequential"):
        res = monte_carlo(spec.world, methods, update_mode=mode, jobs=jobs)
        for m, logs in res.items():
            summ = summarize(logs, spec.skip_transient)
            for c in COMPONENTS:
                for g in ("agent1", "others"):
                    st = summ[c][g]
                    rows.append((mode, m, c.label, g, repr(st.rmse), repr(st.std), repr(st.nees)))
            pos = summ[Component.POSITION]
            print(f"{mode:<11}{m:<10} position RMSE {pos['others'].rmse:.4g} m, STD {pos['others'].std:.4g} m (agents 2-N)")
    with open(spec.out / "update_mode.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(("mode", "method", "component", "agents", "rmse", "std", "nees"))
        wr.writerows(rows)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "default-config":
        sys.stdout.write(format_config(ExperimentSpec()))
        return EXIT_OK
    try:
        spec = resolve_spec(args)
        if args.command == "run":
            return cmd_run(spec, args.jobs, args.dump_world)
        if args.command == "sweep-ta":
            return cmd_sweep_ta(spec, args.ta, args.jobs)
        if args.command == "robustness":
            return cmd_robustness(spec, args.jobs)
        if args.command == "bench":
            return cmd_bench(spec, args.sizes, args.duration)
        if args.command == "update-mode":
            return cmd_update_mode(spec, args.jobs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SingularCovariance, DegenerateGeometry, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    parser.error(f"unknown command {args.command}")
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
