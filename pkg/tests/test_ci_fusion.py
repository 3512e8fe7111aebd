import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wcidcl.ci_fusion import (
    OMEGA_MAX,
    OMEGA_MIN,
    Determinant,
    GaussianEstimate,
    KFStyleCIProblem,
    SingularCovariance,
    Trace,
    WeightedTrace,
    actual_fused_covariance,
    ci_fuse,
    ci_fuse_partial,
    correlation_coefficient,
    evaluate_cost,
    kf_style_ci_update,
    minimize_weight,
    optimize_omega,
    spd_inverse,
)

from conftest import random_spd

seeds = st.integers(0, 2**32 - 1)

FIG_A = (np.diag([1.0, 0.01]), np.diag([1.09, 0.001]))
FIG_B_P1 = np.array([[1.0, 0.008], [0.008, 0.0001]])
FIG_B_H = np.array([[1.0, 0.0]])
FIG_B_P2 = np.array([[0.25]])


def dense_argmin(f, n=100_001):
    grid = np.linspace(OMEGA_MIN, OMEGA_MAX, n)
    vals = np.array([f(w) for w in grid])
    return grid[np.argmin(vals)], vals.min()


def test_unit_weight_returns_first_estimate_exactly():
    e1 = GaussianEstimate([1.0, 2.0], np.diag([1.0, 3.0]))
    e2 = GaussianEstimate([0.0, 0.0], np.zeros((2, 2)))  # never inverted
    assert ci_fuse(e1, e2, 1.0) is e1
    assert ci_fuse(e2, e1, 0.0) is e1


def test_symmetric_inputs_average():
    out = ci_fuse(GaussianEstimate([0.0], [[1.0]]), GaussianEstimate([2.0], [[1.0]]), 0.5)
    np.testing.assert_allclose(out.mean, [1.0])
    np.testing.assert_allclose(out.cov, [[1.0]])


def test_weight_outside_unit_interval_is_rejected():
    e = GaussianEstimate([0.0], [[1.0]])
    with pytest.raises(ValueError):
        ci_fuse(e, e, 1.5)


def test_mismatched_estimate_shapes_are_rejected():
    with pytest.raises(ValueError):
        GaussianEstimate([0.0, 1.0], np.eye(3))


def test_singular_covariance_raises():
    with pytest.raises(SingularCovariance):
        spd_inverse(np.diag([1.0, 1e-14]))
    with pytest.raises(SingularCovariance):
        ci_fuse(GaussianEstimate([0.0, 0.0], np.diag([1.0, 0.0])), GaussianEstimate([0.0, 0.0], np.eye(2)), 0.5)


def test_scale_imbalance_trace_favours_first():
    P1, P2 = FIG_A
    fuse = lambda w: ci_fuse(GaussianEstimate(np.zeros(2), P1), GaussianEstimate(np.zeros(2), P2), w).cov
    w_tr = optimize_omega(Trace(), fuse)
    assert w_tr >= 0.95
    assert abs(np.trace(fuse(w_tr)) - np.trace(P1)) / np.trace(P1) < 0.01
    w_det = optimize_omega(Determinant(), fuse)
    assert w_det < 0.5
    # oracle: dense grid
    w_dense, c_dense = dense_argmin(lambda w: np.trace(fuse(w)), 5001)
    assert np.trace(fuse(w_tr)) <= c_dense + 1e-9


def test_partial_form_reduces_to_full_form(rng):
    P1, P2 = random_spd(rng, 4), random_spd(rng, 4)
    e1 = GaussianEstimate(rng.normal(size=4), P1)
    e2 = GaussianEstimate(rng.normal(size=4), P2)
    full = ci_fuse(e1, e2, 0.3)
    part = ci_fuse_partial(e1, np.eye(4), e2, 0.3)
    np.testing.assert_allclose(part.cov, full.cov, atol=1e-10)
    np.testing.assert_allclose(part.mean, full.mean, atol=1e-10)
    assert ci_fuse_partial(e1, np.eye(4), e2, 1.0) is e1


def test_correlation_mismatch_nominal_and_actual():
    e1 = GaussianEstimate(np.zeros(2), FIG_B_P1)
    e2 = GaussianEstimate(np.zeros(1), FIG_B_P2)
    fuse = lambda w: ci_fuse_partial(e1, FIG_B_H, e2, w).cov
    w = optimize_omega(Trace(), fuse)
    assert correlation_coefficient(fuse(w)) == pytest.approx(0.08, abs=0.02)
    P_act = actual_fused_covariance(FIG_B_P1, FIG_B_P2, np.zeros((2, 1)), FIG_B_P1, FIG_B_P2, w, FIG_B_H)
    assert correlation_coefficient(P_act) == pytest.approx(0.55, abs=0.05)


def test_actual_covariance_independent_symmetric_case():
    I = np.eye(3)
    P_act = actual_fused_covariance(I, I, np.zeros((3, 3)), I, I, 0.5)
    np.testing.assert_allclose(P_act, 0.5 * I)
    nominal = ci_fuse(GaussianEstimate(np.zeros(3), I), GaussianEstimate(np.zeros(3), I), 0.5).cov
    np.testing.assert_allclose(nominal, I)


def admissible_cross(rng, P1s, P2s):
    """P1*^(1/2) K P2*^(1/2)^T with spectral norm of K at most one."""
    L1, L2 = np.linalg.cholesky(P1s), np.linalg.cholesky(P2s)
    K = rng.standard_normal((P1s.shape[0], P2s.shape[0]))
    K *= rng.uniform(0.0, 1.0) / np.linalg.norm(K, 2)
    return L1 @ K @ L2.T


@given(seeds)
def test_ci_is_consistent_for_any_cross_covariance(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 16))
    P1, P2 = random_spd(rng, n), random_spd(rng, n)
    w = rng.uniform(0.0, 1.0)
    P12 = admissible_cross(rng, P1, P2)
    P_nom = ci_fuse(GaussianEstimate(np.zeros(n), P1), GaussianEstimate(np.zeros(n), P2), w).cov
    P_act = actual_fused_covariance(P1, P2, P12, P1, P2, w)
    assert np.linalg.eigvalsh(P_nom - P_act).min() >= -1e-9 * max(1.0, np.abs(P_nom).max())


@given(seeds)
def test_partial_ci_is_consistent(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(2, 16)), int(rng.integers(1, 4))
    P1, P2 = random_spd(rng, n), random_spd(rng, m)
    H = rng.standard_normal((m, n))
    w = rng.uniform(0.01, 1.0)
    P12 = admissible_cross(rng, P1, P2)
    P_nom = ci_fuse_partial(GaussianEstimate(np.zeros(n), P1), H, GaussianEstimate(np.zeros(m), P2), w).cov
    P_act = actual_fused_covariance(P1, P2, P12, P1, P2, w, H)
    assert np.linalg.eigvalsh(P_nom - P_act).min() >= -1e-9 * max(1.0, np.abs(P_nom).max())


@given(seeds, st.floats(0.01, 0.99))
def test_fused_covariance_is_symmetric_psd(seed, w):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 10))
    P = ci_fuse(GaussianEstimate(np.zeros(n), random_spd(rng, n)), GaussianEstimate(np.zeros(n), random_spd(rng, n)), w).cov
    np.testing.assert_allclose(P, P.T, atol=1e-12)
    assert np.linalg.eigvalsh(P).min() > 0


def test_kf_form_zero_innovation(rng):
    P = random_spd(rng, 15)
    H = rng.standard_normal((3, 15))
    R = random_spd(rng, 3)
    dx, P1 = kf_style_ci_update(P, H, R, np.zeros(3), 0.4)
    np.testing.assert_array_equal(dx, 0.0)
    _, P2 = kf_style_ci_update(P, H, R, rng.normal(size=3), 0.4)
    np.testing.assert_allclose(P1, P2)


@given(seeds, st.floats(0.01, 0.99))
def test_kf_form_equals_information_form(seed, w):
    rng = np.random.default_rng(seed)
    P = random_spd(rng, 15)
    m = int(rng.integers(1, 25))
    H = rng.standard_normal((m, 15))
    R = random_spd(rng, m)
    z = rng.normal(size=m)
    dx, P_kf = kf_style_ci_update(P, H, R, z, w)
    # estimate 1: error state 0 with cov P; estimate 2: observation H x = z with cov R
    ref = ci_fuse_partial(GaussianEstimate(np.zeros(15), P), H, GaussianEstimate(z, R), w)
    np.testing.assert_allclose(P_kf, ref.cov, rtol=1e-8, atol=1e-8 * np.abs(ref.cov).max())
    np.testing.assert_allclose(dx, ref.mean, rtol=1e-6, atol=1e-8 * max(1.0, np.abs(ref.mean).max()))


def test_kf_form_vanishes_near_unit_weight(rng):
    P = random_spd(rng, 15)
    H = rng.standard_normal((2, 15))
    R = random_spd(rng, 2)
    w = 1 - 1e-9
    P1 = P / w
    K = P1 @ H.T @ np.linalg.inv(H @ P1 @ H.T + R / (1 - w))
    assert np.linalg.norm(K) < 1e-6 * np.linalg.norm(P @ H.T)
    dx, _ = kf_style_ci_update(P, H, R, np.ones(2), w)
    assert np.linalg.norm(dx) < 1e-6
    with pytest.raises(ValueError):
        kf_style_ci_update(P, H, R, np.ones(2), 1.0)


@pytest.mark.parametrize(
    "cost, expected",
    [(Trace(), 6.0), (Determinant(), 6.0), (WeightedTrace(np.diag([1.0, 0.0, 2.0])), 7.0)],
)
def test_cost_examples(cost, expected):
    assert evaluate_cost(cost, np.diag([1.0, 2.0, 3.0])) == pytest.approx(expected)


def test_identity_weight_is_trace(rng):
    P = random_spd(rng, 6)
    assert evaluate_cost(WeightedTrace(np.eye(6)), P) == pytest.approx(evaluate_cost(Trace(), P), abs=1e-12)


def test_monotone_cost_hits_upper_bound():
    assert minimize_weight(lambda w: -w) == OMEGA_MAX
    assert minimize_weight(lambda w: w) == pytest.approx(OMEGA_MIN, abs=1e-5)


def test_non_finite_grid_points_are_ignored():
    w = minimize_weight(lambda w: np.inf if w < 0.5 else (w - 0.7) ** 2)
    assert w == pytest.approx(0.7, abs=1e-5)


def test_ties_go_to_larger_weight():
    assert minimize_weight(lambda w: 0.0) == OMEGA_MAX


@settings(max_examples=15)
@given(seeds)
def test_optimizer_beats_dense_grid(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    e1 = GaussianEstimate(np.zeros(n), random_spd(rng, n))
    e2 = GaussianEstimate(np.zeros(n), random_spd(rng, n))
    W = random_spd(rng, n)
    f = lambda w: evaluate_cost(WeightedTrace(W), ci_fuse(e1, e2, w).cov)
    w = optimize_omega(WeightedTrace(W), lambda w: ci_fuse(e1, e2, w).cov)
    _, best = dense_argmin(f, 1001)
    assert f(w) <= best + 1e-9 * max(1.0, abs(best))


@pytest.mark.parametrize("criterion", ["trace", "det", "weighted"])
@pytest.mark.parametrize("m", [4, 22])
def test_closed_form_objective_matches_direct_evaluation(rng, criterion, m):
    P = random_spd(rng, 15)
    H = rng.standard_normal((m, 15))
    R = np.diag(rng.uniform(0.1, 2.0, m))
    prob = KFStyleCIProblem(P, H, R, rng.normal(size=m))
    M = rng.standard_normal((3, 15))
    cost = {"trace": Trace(), "det": Determinant(), "weighted": WeightedTrace(M.T @ M)}[criterion]
    f = prob.objective(cost, M if criterion == "weighted" else None)
    for w in (0.05, 0.3, 0.7, 0.95):
        Pw = ci_fuse_partial(GaussianEstimate(np.zeros(15), P), H, GaussianEstimate(prob.z, R), w).cov
        direct = np.linalg.slogdet(Pw)[1] if criterion == "det" else evaluate_cost(cost, Pw)
        assert f(w)[0] == pytest.approx(direct, rel=1e-8)
    # the factor is optional for the weighted criterion
    if criterion == "weighted":
        assert prob.objective(cost)(0.4)[0] == pytest.approx(f(0.4)[0], rel=1e-9)


def test_position_only_weight_equals_zero_horizon(rng):
    from wcidcl.ins import ins_error_sensitivity, wci_weight_matrix

    for _ in range(20):
        P = random_spd(rng, 15, scale=1e-3)
        H = rng.standard_normal((3, 15))
        R = np.diag(rng.uniform(0.01, 1.0, 3))
        prob = KFStyleCIProblem(P, H, R, np.zeros(3))
        S = ins_error_sensitivity(np.eye(3), [0.0, 0.0, 9.8], 0.0)
        W_pos = np.zeros((15, 15))
        W_pos[:3, :3] = np.eye(3)
        a = prob.optimal_weight(WeightedTrace(wci_weight_matrix(S)), M=S)
        b = prob.optimal_weight(WeightedTrace(W_pos))
        assert a == pytest.approx(b, abs=1e-5)


@given(seeds)
def test_weighted_mse_is_monotone_in_loewner_order(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 10))
    W = random_spd(rng, n)
    P2 = random_spd(rng, n)
    P1 = P2 + random_spd(rng, n, scale=1e-3)
    assert np.trace(W @ (P1 - P2)) > 0


@given(seeds)
def test_indefinite_weight_breaks_monotonicity(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 10))
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    # W with a non-positive direction x
    B = random_spd(rng, n)
    proj = np.eye(n) - np.outer(x, x)
    W = proj @ B @ proj - rng.uniform(0.0, 1.0) * np.outer(x, x)
    assert np.trace(W @ np.outer(x, x)) <= 1e-12
