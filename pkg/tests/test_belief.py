import math

import numpy as np
import pytest

from pbdplan.belief import (
    BeliefDistribution,
    ExpFamilyObservation,
    LinearDynamics,
    LinearGaussianObservation,
    StepModel,
    efkf_update,
    gaussian_exp_family,
    kalman_predict,
    kalman_update,
    propagate_pbd_macro,
    propagate_pbd_step,
    sample_observation,
    sample_posterior_beliefs,
)
from pbdplan.errors import DimensionError, InvalidInput, LinkEvaluationError
from pbdplan.gaussian import Gaussian
from pbdplan.macros import MacroAction


def _spd(rng, d, floor=0.1):
    m = rng.normal(size=(d, d))
    return m @ m.T + floor * np.eye(d)


def _random_problem(rng):
    d = int(rng.integers(1, 7))
    k = int(rng.integers(1, d + 1))
    prior = Gaussian(rng.normal(size=d), _spd(rng, d))
    dyn = LinearDynamics(rng.normal(size=(d, d)) / math.sqrt(d), rng.normal(size=(d, 2)), _spd(rng, d, 0.05))
    obs = LinearGaussianObservation(rng.normal(size=(k, d)), _spd(rng, k, 1.0))
    return prior, dyn, obs


# ===== Kalman filter =====

def test_predict_formula(rng):
    prior, dyn, _ = _random_problem(rng)
    a = rng.normal(size=2)
    pred = kalman_predict(prior, a, dyn)
    assert np.allclose(pred.mean, dyn.A @ prior.mean + dyn.B @ a)
    assert np.allclose(pred.cov, dyn.A @ prior.cov @ dyn.A.T + dyn.P)


def test_update_matches_textbook_form(rng):
    for _ in range(50):
        prior, _, obs = _random_problem(rng)
        z = rng.normal(size=obs.C.shape[0])
        post = kalman_update(prior, z, obs)
        S = obs.C @ prior.cov @ obs.C.T + obs.Q
        K = prior.cov @ obs.C.T @ np.linalg.inv(S)
        assert np.allclose(post.mean, prior.mean + K @ (z - obs.C @ prior.mean), atol=1e-9)
        assert np.allclose(post.cov, prior.cov - K @ obs.C @ prior.cov, atol=1e-9)


def test_update_with_known_state_keeps_it():
    prior = Gaussian([2.0, -1.0], np.zeros((2, 2)))
    obs = LinearGaussianObservation(np.eye(2), np.eye(2))
    post = kalman_update(prior, [10.0, 10.0], obs)
    assert np.allclose(post.mean, prior.mean)
    assert np.allclose(post.cov, 0.0)


def test_update_observation_size_checked():
    with pytest.raises(DimensionError):
        kalman_update(Gaussian([0.0], [[1.0]]), [1.0, 2.0], LinearGaussianObservation([[1.0]], [[1.0]]))


# ===== Exponential-family Kalman filter =====

def test_efkf_reproduces_kalman_for_gaussian_family(rng):
    worst = 0.0
    for _ in range(1000):
        prior, _, obs = _random_problem(rng)
        z = rng.normal(size=obs.C.shape[0])
        kf = kalman_update(prior, z, obs)
        ef = efkf_update(prior, z, gaussian_exp_family(obs.C, obs.Q))
        worst = max(worst, np.abs(kf.mean - ef.mean).max(), np.abs(kf.cov - ef.cov).max())
    assert worst < 1e-9


def test_efkf_rejects_non_positive_curvature():
    obs = ExpFamilyObservation(
        link=lambda s: s,
        link_jacobian=lambda s: np.eye(1),
        beta_dot=lambda theta: theta,
        beta_ddot=lambda theta: -np.eye(1),
    )
    with pytest.raises(LinkEvaluationError):
        efkf_update(Gaussian([0.0], [[1.0]]), [1.0], obs)


def test_efkf_poisson_closed_form(rng):
    """Poisson counts with theta = s: variance e^m, equivalent noise e^-m"""
    obs = ExpFamilyObservation(
        link=lambda s: s,
        link_jacobian=lambda s: np.eye(1),
        beta_dot=lambda theta: np.exp(theta),
        beta_ddot=lambda theta: np.diag(np.exp(theta)),
    )
    for _ in range(200):
        m, v, z = rng.normal(), rng.uniform(0.01, 2.0), float(rng.poisson(2.0))
        post = efkf_update(Gaussian([m], [[v]]), [z], obs)
        rate = math.exp(m)
        assert post.mean[0] == pytest.approx(m + v * (z - rate) / (1.0 + v * rate), rel=1e-9, abs=1e-12)
        assert post.cov[0, 0] == pytest.approx(v / (1.0 + v * rate), rel=1e-9)


def test_posterior_covariance_ignores_the_reading(rng):
    for _ in range(200):
        prior, dyn, obs = _random_problem(rng)
        predicted = kalman_predict(prior, rng.normal(size=2), dyn)
        z1, z2 = rng.normal(size=(2, obs.C.shape[0])) * 10.0
        kf1, kf2 = kalman_update(predicted, z1, obs), kalman_update(predicted, z2, obs)
        assert np.array_equal(kf1.cov, kf2.cov)
        ef = gaussian_exp_family(obs.C, obs.Q)
        assert np.array_equal(efkf_update(predicted, z1, ef).cov, efkf_update(predicted, z2, ef).cov)
        # the belief distribution carries the same shared covariance
        bd = propagate_pbd_step(BeliefDistribution.from_belief(prior), np.zeros(2), dyn, obs)
        assert np.allclose(bd.belief_cov, kf1.cov, rtol=1e-9, atol=1e-12)


# ===== Posterior belief distributions =====

def test_total_variance_is_preserved(rng):
    """Predicted covariance = posterior covariance + spread of posterior means"""
    for _ in range(1000):
        prior, dyn, obs = _random_problem(rng)
        a = rng.normal(size=2)
        bd = propagate_pbd_step(BeliefDistribution.from_belief(prior), a, dyn, obs)
        predicted = kalman_predict(prior, a, dyn).cov
        gap = np.linalg.norm(bd.belief_cov + bd.cov_of_means - predicted)
        assert gap <= 1e-8 * np.linalg.norm(predicted)


def test_step_without_observation_only_predicts(rng):
    prior, dyn, _ = _random_problem(rng)
    start = BeliefDistribution(prior.mean, 0.5 * prior.cov, prior.cov)
    bd = propagate_pbd_step(start, np.ones(2), dyn, None)
    assert np.allclose(bd.cov_of_means, dyn.A @ start.cov_of_means @ dyn.A.T)
    assert np.allclose(bd.belief_cov, dyn.A @ prior.cov @ dyn.A.T + dyn.P)


def test_observation_callable_sees_predicted_belief():
    seen = []

    def source(predicted):
        seen.append(predicted.mean.copy())
        return None

    dyn = LinearDynamics([[1.0]], [[1.0]], [[0.0]])
    propagate_pbd_step(BeliefDistribution.from_belief(Gaussian([1.0], [[1.0]])), [2.0], dyn, source)
    assert np.allclose(seen[0], [3.0])


def test_macro_distribution_matches_simulated_filters(rng):
    """Posterior means of explicitly simulated filters spread as predicted"""
    dyn = LinearDynamics([[1.0]], [[1.0]], [[0.2]])
    obs = LinearGaussianObservation([[1.0]], [[0.5]])
    models = [StepModel(dyn, obs), StepModel(dyn, obs)]
    b0 = Gaussian([0.0], [[1.0]])
    bd = propagate_pbd_macro(b0, MacroAction(((1.0,), (0.5,))), models)[-1]

    n = 10_000
    means = np.empty(n)
    for i in range(n):
        belief = b0
        for a in ((1.0,), (0.5,)):
            predicted = kalman_predict(belief, a, dyn)
            belief = kalman_update(predicted, sample_observation(predicted, obs, rng), obs)
        means[i] = belief.mean[0]
        assert belief.cov[0, 0] == pytest.approx(bd.belief_cov[0, 0], rel=1e-9)

    var = bd.cov_of_means[0, 0]
    assert abs(means.mean() - bd.mean_of_means[0]) < 4 * math.sqrt(var / n)
    assert means.var() == pytest.approx(var, rel=0.05)


def test_macro_checks_lengths():
    dyn = LinearDynamics([[1.0]], [[1.0]], [[0.0]])
    b0 = Gaussian([0.0], [[1.0]])
    with pytest.raises(DimensionError):
        propagate_pbd_macro(b0, [(1.0,), (1.0,)], [StepModel(dyn)])
    with pytest.raises(InvalidInput):
        propagate_pbd_macro(b0, [], [])


def test_step_model_control_overrides_action():
    dyn = LinearDynamics([[1.0]], [[1.0]], [[0.0]])
    out = propagate_pbd_macro(Gaussian([0.0], [[1.0]]), ["go"], [StepModel(dyn, None, control=np.array([2.0]))])
    assert out[0].mean_of_means[0] == 2.0


def test_posterior_samples_share_covariance(rng):
    bd = BeliefDistribution([1.0, 2.0], np.diag([0.5, 0.1]), np.diag([0.2, 0.3]))
    beliefs = sample_posterior_beliefs(bd, 5, rng)
    assert len(beliefs) == 5
    for b in beliefs:
        assert np.array_equal(b.cov, bd.belief_cov)
    assert len({tuple(b.mean) for b in beliefs}) == 5
    with pytest.raises(InvalidInput):
        sample_posterior_beliefs(bd, 0, rng)


def test_marginal_and_mean_belief():
    bd = BeliefDistribution([1.0], [[0.5]], [[0.25]])
    assert bd.marginal().cov[0, 0] == 0.75
    assert bd.mean_belief.cov[0, 0] == 0.25
    assert bd.mean_belief.mean[0] == 1.0
