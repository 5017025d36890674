import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from shiftbai.errors import DisconnectedDesignError
from shiftbai.ols import (
    fit_ols,
    fit_ols_separated,
    residual_sum_of_squares,
    separated_covariances,
    upper_confidence_bounds,
)
from shiftbai.stats import ObservationLog, SufficientStats


def _log(rows):
    log = ObservationLog()
    for j, i, r in rows:
        log.append(j, i, r)
    return log


INCONSISTENT = [(1, 0, 0.0), (1, 0, 2.0), (1, 1, 1.0), (2, 0, 4.0), (2, 1, 5.0)]
CONSISTENT = [(1, 0, 0.0), (1, 1, 1.0), (2, 0, 2.0), (2, 1, 3.0)]


def _brute_force(rows, k):
    """Normal equations solved with an explicit inverse of X'X."""
    A, B, r = _log(rows).design(k)
    X = np.hstack([A, B])
    G_inv = np.linalg.inv(X.T @ X)
    theta = G_inv @ X.T @ r
    resid = r - X @ theta
    return theta, G_inv, resid @ resid / (r.size - X.shape[1])


def test_inconsistent_system_values():
    fit = fit_ols(_log(INCONSISTENT).to_stats(2))
    np.testing.assert_allclose(fit.mu_hat, [6 / 7, 9 / 7], atol=1e-12)
    np.testing.assert_allclose(fit.s_hat, [24 / 7], atol=1e-12)
    assert fit.sigma2_hat == pytest.approx(8 / 7, abs=1e-12)
    assert fit.dof == 2
    theta, G_inv, s2 = _brute_force(INCONSISTENT, 2)
    np.testing.assert_allclose(fit.theta, theta, atol=1e-12)
    np.testing.assert_allclose(fit.theta_cov_unit, G_inv, atol=1e-12)
    assert fit.sigma2_hat == pytest.approx(s2, abs=1e-12)


def test_gram_inverse_of_inconsistent_system():
    fit = fit_ols(_log(INCONSISTENT).to_stats(2))
    expected = np.linalg.inv(np.array([[3.0, 0, 1], [0, 2, 1], [1, 1, 2]]))
    np.testing.assert_allclose(fit.theta_cov_unit, expected, atol=1e-12)


def test_consistent_system_has_zero_residuals():
    stats = _log(CONSISTENT).to_stats(2)
    fit = fit_ols(stats)
    np.testing.assert_allclose(fit.mu_hat, [0, 1], atol=1e-12)
    np.testing.assert_allclose(fit.s_hat, [2], atol=1e-12)
    assert residual_sum_of_squares(fit, stats) == pytest.approx(0, abs=1e-12)
    mu, s = fit_ols_separated(_log(CONSISTENT), 2)
    np.testing.assert_allclose(mu, [0, 1], atol=1e-12)
    np.testing.assert_allclose(s, [2], atol=1e-12)


def test_separated_solution_on_inconsistent_system():
    mu, s = fit_ols_separated(_log(INCONSISTENT), 2)
    fit = fit_ols(_log(INCONSISTENT).to_stats(2))
    np.testing.assert_allclose(mu, fit.mu_hat, atol=1e-9)
    np.testing.assert_allclose(s, fit.s_hat, atol=1e-9)


def test_single_environment_gives_sample_means():
    rows = [(1, 0, 1.0), (1, 0, 2.0), (1, 1, 5.0), (1, 2, -1.0), (1, 2, 0.0), (1, 2, 4.0)]
    fit = fit_ols(_log(rows).to_stats(3))
    np.testing.assert_allclose(fit.mu_hat, [1.5, 5.0, 1.0], atol=1e-12)
    assert fit.s_hat.size == 0
    np.testing.assert_allclose(np.diag(fit.mean_cov_unit), [1 / 2, 1, 1 / 3], atol=1e-12)
    mu, s = fit_ols_separated(_log(rows), 3)
    np.testing.assert_allclose(mu, [1.5, 5.0, 1.0], atol=1e-12)
    assert s.size == 0


def test_disconnected_design_raises():
    rows = [(1, 0, 0.0), (1, 1, 1.0), (2, 2, 3.0), (2, 3, 1.0)]
    with pytest.raises(DisconnectedDesignError):
        fit_ols(_log(rows).to_stats(4))


def test_no_residual_dof():
    fit = fit_ols(_log(CONSISTENT[:3]).to_stats(2))
    assert fit.dof == 0
    assert fit.sigma2_hat is None
    assert fit.sigma2 == 1.0
    assert fit_ols(_log(CONSISTENT[:3]).to_stats(2), known_sigma2=4.0).sigma2 == 4.0


def test_ucb_at_first_step_is_the_mean():
    ucb = upper_confidence_bounds([0.3, 1.2], [0.5, 0.5], 1, [2, 3])
    np.testing.assert_allclose(ucb, [0.3, 1.2])


def test_ucb_width():
    ucb = upper_confidence_bounds([0.0], [0.25], math.e, [4])
    assert ucb[0] == pytest.approx(math.sqrt(16 / 4) * 0.5)


# random connected designs


@st.composite
def connected_logs(draw, max_k=6, max_j=6, max_n=60):
    k = draw(st.integers(2, max_k))
    n_env = draw(st.integers(1, max_j))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    rows = []
    # spanning chain: each environment shares an arm with the previous one
    perm = rng.permutation(k)
    chunks = np.array_split(perm, n_env) if n_env <= k else [perm[[i % k]] for i in range(n_env)]
    prev = None
    for j, chunk in enumerate(chunks, start=1):
        arms = list(chunk)
        if prev is not None:
            arms.append(prev)
        if len(arms) == 1 and j == 1 and n_env == 1:
            arms = list(perm)
        for a in arms:
            rows.append((j, int(a), 0.0))
        prev = int(arms[-1]) if j == 1 else int(chunk[-1])
    total = draw(st.integers(len(rows), max(len(rows), max_n)))
    for _ in range(total - len(rows)):
        rows.append((int(rng.integers(1, n_env + 1)), int(rng.integers(k)), 0.0))
    rows.sort(key=lambda x: x[0])
    rewards = rng.normal(0, 3, len(rows)) + rng.uniform(0, 20, n_env)[[j - 1 for j, _, _ in rows]]
    log = _log([(j, a, float(r)) for (j, a, _), r in zip(rows, rewards)])
    stats = log.to_stats(k)
    assume(stats.is_connected())
    return k, log, stats


@settings(max_examples=80, deadline=None)
@given(connected_logs())
def test_joint_matches_separated_and_residuals_are_orthogonal(case):
    k, log, stats = case
    fit = fit_ols(stats)
    mu, s = fit_ols_separated(log, k)
    np.testing.assert_allclose(fit.mu_hat, mu, atol=1e-9)
    np.testing.assert_allclose(fit.s_hat, s, atol=1e-9)
    A, B, r = log.design(k)
    X = np.hstack([A, B])
    np.testing.assert_allclose(X.T @ (r - X @ fit.theta), 0, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(connected_logs(), st.floats(-50, 50))
def test_translation_moves_shifts_only(case, offset):
    k, log, stats = case
    base = fit_ols(stats)
    moved = _log([(j, i, r + (offset if j >= 2 else 0.0)) for j, i, r in zip(log.envs, log.arms, log.rewards)])
    fit = fit_ols(moved.to_stats(k))
    np.testing.assert_allclose(fit.mu_hat, base.mu_hat, atol=1e-8)
    np.testing.assert_allclose(fit.s_hat, base.s_hat + offset, atol=1e-8)
    # a common offset on every reward moves the means instead
    lifted = _log([(j, i, r + offset) for j, i, r in zip(log.envs, log.arms, log.rewards)])
    fit = fit_ols(lifted.to_stats(k))
    np.testing.assert_allclose(fit.mu_hat, base.mu_hat + offset, atol=1e-8)
    np.testing.assert_allclose(fit.s_hat, base.s_hat, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(connected_logs(), st.integers(0, 5), st.integers(1, 4), st.floats(-30, 30))
def test_single_arm_environment_leaves_means_unchanged(case, arm, repeats, reward):
    k, log, stats = case
    base = fit_ols(stats)
    after = stats.copy()
    for _ in range(repeats):
        after.record(stats.J + 1, arm % k, reward)
    fit = fit_ols(after)
    assert np.array_equal(fit.mu_hat, base.mu_hat)
    assert np.array_equal(fit.mean_cov_unit, base.mean_cov_unit)


@settings(max_examples=60, deadline=None)
@given(connected_logs())
def test_covariance_forms_agree(case):
    k, log, stats = case
    fit = fit_ols(stats)
    cov_mu, cov_s = separated_covariances(log, k, 2.0)
    np.testing.assert_allclose(2.0 * fit.mean_cov_unit, cov_mu, atol=1e-8)
    np.testing.assert_allclose(2.0 * fit.theta_cov_unit[k:, k:], cov_s, atol=1e-8)


@settings(max_examples=40, deadline=None)
@given(connected_logs())
def test_cell_path_matches_record_path(case):
    k, log, stats = case
    batch = SufficientStats.from_cells(stats.counts, stats.cell_sums, stats.sq_sum)
    a, b = fit_ols(stats), fit_ols(batch)
    np.testing.assert_allclose(a.theta, b.theta, atol=1e-9)
    if a.sigma2_hat is not None:
        assert a.sigma2_hat == pytest.approx(b.sigma2_hat, abs=1e-9)
