"""
End-to-end acceptance suite. Every criterion prints one PASS/FAIL line and
the full list is repeated in the terminal summary.
"""

import hashlib
import time
from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest

from wcidcl import cli
from wcidcl.ci_fusion import (
    Determinant,
    GaussianEstimate,
    Trace,
    WeightedTrace,
    actual_fused_covariance,
    ci_fuse,
    ci_fuse_partial,
    correlation_coefficient,
    optimize_omega,
)
from wcidcl.config import ExperimentSpec
from wcidcl.experiment import monte_carlo
from wcidcl.ins import N_ERR, ImuSample, NominalState, error_dynamics, mechanize, mechanize_samples
from wcidcl.attitude import attitude_error, quat_from_rotvec, quat_multiply, quat_to_rotmat
from wcidcl.metrics import COMPONENTS, Component, summarize
from wcidcl.ranging import NeighborInfo, agent_observation_row, anchor_observation_row
from wcidcl.simworld import EventSchedule, WorldConfig, default_segments, generate_truth

from conftest import VERDICTS, random_quat, random_spd

DEFAULT = WorldConfig()
DCL = ("ci-trace", "ci-det", "wci")


def verdict(n, checks, detail=""):
    """Record and print the verdict of criterion ``n``; fail if any check failed."""
    ok = all(checks.values())
    failed = [k for k, v in checks.items() if not v]
    line = f"CRITERION {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    if failed:
        line += f"  [failed: {'; '.join(failed)}]"
    VERDICTS[n] = line
    print(line)
    assert ok, line


@lru_cache(maxsize=None)
def mc(methods, n_runs, T_a=None, mode="concurrent", events=False):
    schedule = EventSchedule.robustness() if events else None
    return monte_carlo(DEFAULT, list(methods), n_runs, schedule=schedule, update_mode=mode, T_a=T_a)


def admissible_cross(rng, P1, P2):
    L1, L2 = np.linalg.cholesky(P1), np.linalg.cholesky(P2)
    K = rng.standard_normal((P1.shape[0], P2.shape[0]))
    K *= rng.uniform(0.0, 1.0) / np.linalg.norm(K, 2)
    return L1 @ K @ L2.T


# -- 1-4: fusion primitives --------------------------------------------------------


def test_criterion_1_scale_imbalance():
    t0 = time.perf_counter()
    P1, P2 = np.diag([1.0, 0.01]), np.diag([1.09, 0.001])
    fuse = lambda w: ci_fuse(GaussianEstimate(np.zeros(2), P1), GaussianEstimate(np.zeros(2), P2), w).cov
    w_tr, w_det = optimize_omega(Trace(), fuse), optimize_omega(Determinant(), fuse)
    gap = abs(np.trace(fuse(w_tr)) - np.trace(P1)) / np.trace(P1)
    dt = time.perf_counter() - t0
    verdict(
        1,
        {"trace gap < 1%": gap < 0.01, "det weight < 0.5": w_det < 0.5, "runtime < 1 s": dt < 1.0},
        f"w_trace={w_tr:.4f} gap={gap:.2%} w_det={w_det:.4f} ({dt:.2f} s)",
    )


def test_criterion_2_correlation_mismatch():
    t0 = time.perf_counter()
    P1, H, P2 = np.array([[1.0, 0.008], [0.008, 0.0001]]), np.array([[1.0, 0.0]]), np.array([[0.25]])
    e1, e2 = GaussianEstimate(np.zeros(2), P1), GaussianEstimate(np.zeros(1), P2)
    fuse = lambda w: ci_fuse_partial(e1, H, e2, w).cov
    w = optimize_omega(Trace(), fuse)
    rho_nom = correlation_coefficient(fuse(w))
    rho_act = correlation_coefficient(actual_fused_covariance(P1, P2, np.zeros((2, 1)), P1, P2, w, H))
    dt = time.perf_counter() - t0
    verdict(
        2,
        {
            "nominal 0.08 +- 0.02": abs(rho_nom - 0.08) <= 0.02,
            "actual 0.55 +- 0.05": abs(rho_act - 0.55) <= 0.05,
            "runtime < 1 s": dt < 1.0,
        },
        f"rho_nominal={rho_nom:.3f} rho_actual={rho_act:.3f} ({dt:.2f} s)",
    )


def test_criterion_3_consistency_monte_carlo():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = np.inf
    for i in range(1000):
        n = int(rng.integers(2, 16))
        P1s, P2s = random_spd(rng, n), random_spd(rng, n)
        P12 = admissible_cross(rng, P1s, P2s)
        # tight case: the nominal inputs are the true ones
        P1, P2 = P1s, P2s
        e1, e2 = GaussianEstimate(np.zeros(n), P1), GaussianEstimate(np.zeros(n), P2)
        fuse = lambda w: ci_fuse(e1, e2, w).cov
        # one random weight and one chosen by a random weighted trace
        for w in (rng.uniform(0.0, 1.0), optimize_omega(WeightedTrace(random_spd(rng, n)), fuse)):
            P_nom = fuse(w)
            P_act = actual_fused_covariance(P1s, P2s, P12, P1, P2, w)
            worst = min(worst, np.linalg.eigvalsh(P_nom - P_act).min())
    dt = time.perf_counter() - t0
    verdict(
        3,
        {"min eigenvalue >= -1e-9": worst >= -1e-9, "runtime < 30 s": dt < 30.0},
        f"min eig(P_nominal - P_actual)={worst:.3e} ({dt:.1f} s)",
    )


def test_criterion_4_weighted_trace_monotonicity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    pos = []
    for _ in range(1000):
        n = int(rng.integers(2, 16))
        W, P2 = random_spd(rng, n), random_spd(rng, n)
        P1 = P2 + random_spd(rng, n, scale=rng.uniform(1e-4, 1.0))
        pos.append(np.trace(W @ (P1 - P2)))
    neg = []
    for _ in range(100):
        n = int(rng.integers(2, 16))
        x = rng.standard_normal(n)
        x /= np.linalg.norm(x)
        proj = np.eye(n) - np.outer(x, x)
        W = proj @ random_spd(rng, n) @ proj - rng.uniform(0.0, 1.0) * np.outer(x, x)
        assert np.linalg.eigvalsh(W).min() <= 1e-12  # indefinite or singular
        neg.append(np.trace(W @ np.outer(x, x)))
    dt = time.perf_counter() - t0
    verdict(
        4,
        {"PD weights give > 0": min(pos) > 0, "counterexamples give <= 0": max(neg) <= 1e-12, "runtime < 10 s": dt < 10.0},
        f"min tr(W dP)={min(pos):.3e} max counterexample={max(neg):.3e} ({dt:.2f} s)",
    )


# -- 5-9: simulated scenarios -----------------------------------------------------


@pytest.mark.slow
def test_criterion_5_method_ordering():
    res = mc(("ekf",) + DCL, 5)
    s = {m: summarize(res[m]) for m in res}
    pos = lambda m, g: s[m][Component.POSITION][g].rmse
    att = lambda m, g: s[m][Component.ATTITUDE][g].rmse
    checks = {}
    for g in ("agent1", "others"):
        checks[f"EKF best position ({g})"] = all(pos("ekf", g) <= pos(m, g) for m in DCL)
    checks["CI-trace/WCI attitude > 3 (agent1)"] = att("ci-trace", "agent1") / att("wci", "agent1") > 3
    for g in ("agent1", "others"):
        checks[f"CI-det/WCI position > 1.5 ({g})"] = pos("ci-det", g) / pos("wci", g) > 1.5
    nees = {c.name.lower(): s["wci"][c]["agent1"].nees for c in COMPONENTS}
    checks["WCI NEES < 3 (agent1)"] = all(v < 3 for v in nees.values())
    ratios = {m: np.mean([s[m][c][g].std / s[m][c][g].rmse for c in COMPONENTS for g in ("agent1", "others")]) for m in DCL}
    checks["CI STD >= RMSE on average"] = all(r >= 1 for r in ratios.values())
    detail = (
        "pos a1/others "
        + " ".join(f"{m}={pos(m, 'agent1'):.3g}/{pos(m, 'others'):.3g}" for m in res)
        + f"; att a1 ci-trace={att('ci-trace', 'agent1'):.3g} wci={att('wci', 'agent1'):.3g}"
        + "; wci NEES a1 " + " ".join(f"{k}={v:.2f}" for k, v in nees.items())
        + "; STD/RMSE " + " ".join(f"{m}={r:.2f}" for m, r in ratios.items())
    )
    verdict(5, checks, detail)


@pytest.mark.slow
def test_criterion_6_horizon_sweep():
    std = {}
    for T_a in (1.0, 5.0, 20.0):
        s = summarize(mc(("wci",), 3, T_a)["wci"])
        std[T_a] = {c: np.mean([s[c][g].std for g in ("agent1", "others")]) for c in (Component.POSITION, Component.ATTITUDE)}
    p = [std[t][Component.POSITION] for t in sorted(std)]
    a = [std[t][Component.ATTITUDE] for t in sorted(std)]
    verdict(
        6,
        {"position STD non-decreasing": bool(np.all(np.diff(p) >= 0)), "attitude STD non-increasing": bool(np.all(np.diff(a) <= 0))},
        "T_a=1,5,20 position STD " + ", ".join(f"{v:.3g}" for v in p) + "; attitude STD " + ", ".join(f"{v:.3g}" for v in a),
    )


@pytest.mark.slow
def test_criterion_7_concurrent_vs_sequential():
    conc, seq = mc(("ekf", "wci"), 3), mc(("ekf", "wci"), 3, mode="sequential")
    sc = {m: summarize(conc[m])[Component.POSITION] for m in conc}
    ss = {m: summarize(seq[m])[Component.POSITION] for m in seq}
    checks = {f"WCI concurrent STD < sequential ({g})": sc["wci"][g].std < ss["wci"][g].std for g in ("agent1", "others")}
    gaps = {g: abs(sc["ekf"][g].rmse - ss["ekf"][g].rmse) / ss["ekf"][g].rmse for g in ("agent1", "others")}
    checks["EKF modes within 1%"] = max(gaps.values()) < 0.01
    verdict(
        7,
        checks,
        "WCI STD conc/seq "
        + " ".join(f"{g}={sc['wci'][g].std:.3g}/{ss['wci'][g].std:.3g}" for g in ("agent1", "others"))
        + "; EKF RMSE gap "
        + " ".join(f"{g}={v:.2%}" for g, v in gaps.items()),
    )


@pytest.mark.slow
def test_criterion_8_robustness():
    methods = ("ekf",) + DCL
    base, events = mc(methods, 3), mc(methods, 3, events=True)
    others = lambda logs, lo, hi: summarize(logs, window=(lo, hi))[Component.POSITION]["others"].rmse
    checks, parts = {}, []
    for m in DCL:
        b, e = others(base[m], 30.0, 90.0), others(events[m], 30.0, 90.0)
        checks[f"{m} within 20% (30-90 s)"] = abs(e - b) <= 0.2 * b
        parts.append(f"{m}={b:.3g}->{e:.3g}")
    end = DEFAULT.duration
    b, e = others(base["ekf"], 30.0, end), others(events["ekf"], 30.0, end)
    checks["CCL exceeds baseline by > 20% after loss begins"] = e > 1.2 * b
    parts.append(f"ekf(30-{end:g} s)={b:.3g}->{e:.3g}")
    verdict(8, checks, "agents 2-N position RMSE base->events " + " ".join(parts))


@pytest.mark.slow
def test_criterion_9_complexity(tmp_path):
    t0 = time.perf_counter()
    sizes = [4, 8, 16, 32]
    times = cli.bench(replace(ExperimentSpec(), out=tmp_path), sizes, 10.0, repeats=5)
    slopes = {m: cli.loglog_slope(sizes, ts) for m, ts in times.items()}
    dt = time.perf_counter() - t0
    verdict(
        9,
        {"DCL slope < 1.3": slopes["dcl"] < 1.3, "CCL slope > 2.0": slopes["ccl"] > 2.0, "runtime < 5 min": dt < 300},
        f"slopes dcl={slopes['dcl']:.2f} ccl={slopes['ccl']:.2f} ({dt:.0f} s)",
    )


# -- 10: numerical hygiene ---------------------------------------------------------

LEVER = np.array([0.1, 0.0, 0.1])


def _perturbed(x, dx):
    return NominalState(x.p + dx[0:3], x.v + dx[3:6], quat_multiply(quat_from_rotvec(-dx[6:9]), x.q))


def _ranging_jacobian_errors(rng):
    xi = NominalState(rng.uniform(-30, 30, 3), rng.normal(size=3), random_quat(rng))
    xj = NominalState(rng.uniform(-30, 30, 3), rng.normal(size=3), random_quat(rng))
    anchor = np.array([100.0, -100.0, 100.0])
    d = lambda a, b: np.linalg.norm(a.p + a.C @ LEVER - b)
    d2 = lambda a, b: d(a, b.p + b.C @ LEVER)
    info = NeighborInfo(2, xj.p, xj.q, np.full(3, 0.01), np.full(3, 1e-4))
    H_anc, _ = anchor_observation_row(xi, LEVER, anchor)
    H, G, _ = agent_observation_row(xi, info, LEVER)
    eps = 1e-6
    num_anc, num_h, num_g = np.zeros(N_ERR), np.zeros(N_ERR), np.zeros(6)
    for k, j in enumerate([0, 1, 2, 6, 7, 8]):
        dx = np.zeros(N_ERR)
        dx[j] = eps
        num_anc[j] = (d(_perturbed(xi, dx), anchor) - d(_perturbed(xi, -dx), anchor)) / (2 * eps)
        num_h[j] = (d2(_perturbed(xi, dx), xj) - d2(_perturbed(xi, -dx), xj)) / (2 * eps)
        # a neighbour estimate off by dx has its true state at the estimate minus dx
        num_g[k] = -(d2(xi, _perturbed(xj, -dx)) - d2(xi, _perturbed(xj, dx))) / (2 * eps)
    rel = lambda a, b: np.abs(a - b).max() / np.abs(b).max()
    return rel(num_anc, H_anc), rel(num_h, H), rel(num_g, G[:6])


def _dynamics_jacobian_error(rng):
    p, v, q = rng.normal(0, 1, 3), rng.normal(0, 3, 3), random_quat(rng)
    bg, ba = rng.normal(0, 1e-3, 3), rng.normal(0, 1e-2, 3)
    f_meas = quat_to_rotmat(q).T @ (np.array([0, 0, 9.8]) + rng.normal(0, 2, 3)) + ba
    w_meas = rng.normal(0, 0.5, 3) + bg
    dt, eps = 1e-6, 1e-4
    imu = ImuSample(f_meas, w_meas, dt)
    moved = mechanize(NominalState(p, v, q), ImuSample(f_meas - ba, w_meas - bg, dt))

    def error(xh):
        return np.r_[xh.p - moved.p, xh.v - moved.v, attitude_error(xh.q, moved.q), bg - xh.bg, ba - xh.ba]

    J = np.empty((N_ERR, N_ERR))
    for j in range(N_ERR):
        rates = []
        for s in (1.0, -1.0):
            dx = np.zeros(N_ERR)
            dx[j] = s * eps
            est = NominalState(p + dx[0:3], v + dx[3:6], quat_multiply(quat_from_rotvec(-dx[6:9]), q), bg - dx[9:12], ba - dx[12:15])
            rates.append((error(mechanize(est, imu)) - dx) / dt)
        J[:, j] = (rates[0] - rates[1]) / (2 * eps)
    F = error_dynamics(quat_to_rotmat(q), f_meas - ba)
    return np.abs(J - F).max() / np.abs(F).max()


SHORT = "[world]\nn_agents = 4\nn_sim = 2\nseed = 9\n\n[trajectory]\nsegments = accelerate 0.4 3\n"


def test_criterion_10_numerical_hygiene(tmp_path):
    rng = np.random.default_rng(10)
    ranging = np.array([_ranging_jacobian_errors(rng) for _ in range(5)]).max(axis=0)
    dyn = max(_dynamics_jacobian_error(rng) for _ in range(3))

    q0 = np.array([np.cos(0.3), 0.0, 0.0, np.sin(0.3)])
    tr = generate_truth(default_segments(), NominalState([5.0, -3.0, 2.0], np.zeros(3), q0), 200.0)
    x = mechanize_samples(tr.state(0), tr.f_b, tr.w_b, np.full(len(tr) - 1, tr.dt))
    closure = np.linalg.norm(x.p - tr.p[-1])

    cfg = tmp_path / "short.ini"
    cfg.write_text(SHORT)
    digests = []
    for out in ("a", "b"):
        assert cli.main(["run", "--config", str(cfg), "--methods", "ekf,wci", "--out", str(tmp_path / out), "--dump-world"]) == 0
        digests.append([hashlib.sha256((tmp_path / out / f).read_bytes()).hexdigest() for f in ("timeseries.csv", "truth.csv", "ranges.csv")])
    verdict(
        10,
        {
            "anchor H finite difference": ranging[0] < 1e-4,
            "agent H finite difference": ranging[1] < 1e-4,
            "agent G finite difference": ranging[2] < 1e-4,
            "INS F finite difference": dyn < 1e-4,
            "closure < 1e-3 m at 120 s": closure < 1e-3 and tr.t[-1] >= 120.0 - 1e-9,
            "same seed same CSV hashes": digests[0] == digests[1],
        },
        f"rel err H_anchor={ranging[0]:.1e} H={ranging[1]:.1e} G={ranging[2]:.1e} F={dyn:.1e}; closure={closure:.1e} m",
    )
