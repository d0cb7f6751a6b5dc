import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rlaudit.bayes import (
    Prior,
    PosteriorState,
    SingularCovarianceError,
    beta_marginal,
    design_tilde,
    fit_reward_model,
    make_default_prior,
    posterior_update,
    spd_inverse,
)
from rlaudit.core import build_trajectory

from conftest import random_rows


def batch_posterior(prior, phi, reward, sigma2):
    """One-shot conjugate posterior with plain solves."""
    P0 = np.linalg.inv(prior.sigma0)
    P = P0 + phi.T @ phi / sigma2
    sigma = np.linalg.inv(P)
    mu = np.linalg.solve(P, P0 @ prior.mu0 + phi.T @ reward / sigma2)
    return mu, sigma


def test_prior_blocks():
    p = make_default_prior()
    np.testing.assert_array_equal(p.mu0[:8], [0.82, 1.95, 3.81, -0.19, 0.76, 0, -0.92, 0])
    np.testing.assert_array_equal(p.mu0[8:13], [0.47, 0, 0, 0, 0])
    np.testing.assert_array_equal(p.mu0[13:], [0.47, 0, 0, 0, 0])
    np.testing.assert_array_equal(np.diag(p.sigma0)[:8], [14.24, 13.35, 3.24, 0.57, 19.00, 0.26, 17.00, 7.35])
    np.testing.assert_array_equal(np.diag(p.sigma0)[8:13], [4.93, 24.56, 4.95, 0.67, 0.82])
    np.testing.assert_array_equal(np.diag(p.sigma0)[13:], [4.93, 24.56, 4.95, 0.67, 0.82])
    assert np.count_nonzero(p.sigma0 - np.diag(np.diag(p.sigma0))) == 0


def test_prior_validation():
    with pytest.raises(ValueError):
        Prior(np.zeros(7), np.zeros(5), np.ones(8), np.ones(5))
    with pytest.raises(ValueError, match="positive definite"):
        Prior(np.zeros(8), np.zeros(5), -np.ones(8), np.ones(5))


def test_recursive_equals_batch_on_random_days():
    rng = np.random.default_rng(0)
    prior = make_default_prior()
    for _ in range(100):
        n_day = rng.integers(1, 11)
        sigma2 = float(rng.uniform(0.3, 3.0))
        state = PosteriorState.from_prior(prior)
        rows, rewards = [], []
        for _ in range(n_day):
            batch = []
            for _ in range(5):
                phi = rng.uniform(-3, 3, 18)
                r = float(rng.normal())
                avail = bool(rng.random() < 0.8)
                batch.append((phi, r, avail))
                if avail:
                    rows.append(phi)
                    rewards.append(r)
            state = posterior_update(state, prior, batch, sigma2)
        if not rows:
            continue
        mu, sigma = batch_posterior(prior, np.array(rows), np.array(rewards), sigma2)
        assert np.max(np.abs(state.mu - mu)) < 1e-8
        assert np.max(np.abs(state.sigma - sigma)) < 1e-8
        assert state.day == n_day


def test_missing_and_unavailable_rows_are_excluded():
    prior = make_default_prior()
    rng = np.random.default_rng(1)
    phis = rng.uniform(-1, 1, (5, 18))
    state0 = PosteriorState.from_prior(prior)
    full = posterior_update(state0, prior, [(phis[0], 1.0, True), (phis[1], None, True),
                                            (phis[2], 5.0, False)])
    only = posterior_update(state0, prior, [(phis[0], 1.0, True)])
    np.testing.assert_allclose(full.mu, only.mu, atol=1e-12)
    np.testing.assert_allclose(full.sigma, only.sigma, atol=1e-12)


def test_nan_reward_rejected():
    prior = make_default_prior()
    with pytest.raises(ValueError, match="not finite"):
        posterior_update(PosteriorState.from_prior(prior), prior, [(np.ones(18), float("nan"), True)])


def test_empty_day_only_advances_counter():
    prior = make_default_prior()
    s0 = PosteriorState.from_prior(prior)
    s1 = posterior_update(s0, prior, [])
    assert s1.day == 1
    np.testing.assert_array_equal(s1.mu, s0.mu)
    np.testing.assert_array_equal(s1.sigma, s0.sigma)


def test_singular_covariance_reports_day():
    prior = make_default_prior()
    bad = PosteriorState(3, prior.mu0, -np.eye(18))
    with pytest.raises(SingularCovarianceError) as info:
        posterior_update(bad, prior, [(np.ones(18), 1.0, True)])
    assert info.value.day == 4


def test_beta_marginal_is_last_block():
    prior = make_default_prior()
    mu, sigma = beta_marginal(PosteriorState.from_prior(prior))
    np.testing.assert_array_equal(mu, prior.mu_beta)
    np.testing.assert_array_equal(sigma, prior.sigma_beta)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_posterior_covariance_is_spd(seed):
    rng = np.random.default_rng(seed)
    prior = make_default_prior()
    state = PosteriorState.from_prior(prior)
    for _ in range(3):
        state = posterior_update(state, prior, [(rng.uniform(-3, 3, 18), float(rng.normal()), True)
                                                for _ in range(5)])
    np.testing.assert_array_equal(state.sigma, state.sigma.T)
    assert np.linalg.eigvalsh(state.sigma).min() > 0


def test_spd_inverse_matches_numpy():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(6, 6))
    M = A @ A.T + np.eye(6)
    np.testing.assert_allclose(spd_inverse(M), np.linalg.inv(M), atol=1e-12)


def stacked_ridge(phi, reward, prior, sigma2):
    """Ridge as ordinary least squares on a design augmented with prior rows."""
    c = np.diag(prior.ridge_cov)
    X = np.vstack([phi / np.sqrt(sigma2), np.diag(1 / np.sqrt(c))])
    y = np.concatenate([reward / np.sqrt(sigma2), prior.ridge_mean / np.sqrt(c)])
    return np.linalg.lstsq(X, y, rcond=None)[0]


def test_ridge_matches_stacked_lstsq():
    prior = make_default_prior()
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        traj = build_trajectory("u", random_rows(rng, int(rng.integers(10, 60))))
        if not traj.usable_array.any():
            continue
        sigma2 = float(rng.uniform(0.5, 2.0))
        fit = fit_reward_model(traj, prior, sigma2)
        phi, reward, usable = design_tilde(traj)
        want = stacked_ridge(phi[usable], reward[usable], prior, sigma2)
        worst = max(worst, np.max(np.abs(fit.coef - want)))
    assert worst < 1e-8


def test_ridge_sigma2_estimate_uses_pilot_fit():
    prior = make_default_prior()
    traj = build_trajectory("u", random_rows(np.random.default_rng(4), 80))
    phi, reward, usable = design_tilde(traj)
    pilot = stacked_ridge(phi[usable], reward[usable], prior, 1.0)
    want = np.mean((reward[usable] - phi[usable] @ pilot) ** 2)
    fit = fit_reward_model(traj, prior)
    assert fit.sigma2 == pytest.approx(want, rel=1e-10)
    np.testing.assert_allclose(fit.coef, stacked_ridge(phi[usable], reward[usable], prior, fit.sigma2), atol=1e-8)


def test_ridge_needs_usable_points():
    rows = random_rows(np.random.default_rng(0), 10, avail=0.0)
    with pytest.raises(ValueError, match="no available"):
        fit_reward_model(build_trajectory("empty", rows), make_default_prior())
