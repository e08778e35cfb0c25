import numpy as np
import pytest

from pbdplan.belief import ExpFamilyObservation, LinearDynamics, LinearGaussianObservation, gaussian_exp_family
from pbdplan.domains import LinearGaussianDomain
from pbdplan.errors import UnsupportedDomain
from pbdplan.gaussian import Gaussian
from pbdplan.rewards import ANY_ACTION, GaussianMixtureReward, MixtureComponent


def _domain(observation):
    return LinearGaussianDomain(
        dynamics=LinearDynamics([[1.0]], [[1.0]], [[0.1]]),
        observation=observation,
        controls={"left": [-1.0], "right": [1.0]},
        reward=GaussianMixtureReward({ANY_ACTION: [MixtureComponent(10.0, [3.0], [[1.0]])]}),
        initial_belief=Gaussian([0.0], [[1.0]]),
    )


def test_exp_family_observation_without_sampler_cannot_execute(rng):
    obs = ExpFamilyObservation(
        link=lambda s: s,
        link_jacobian=lambda s: np.eye(1),
        beta_dot=lambda theta: theta,
        beta_ddot=lambda theta: np.eye(1),
    )
    domain = _domain(obs)
    with pytest.raises(UnsupportedDomain):
        domain.execute(np.zeros(1), domain.initial_node(None), "right", rng)


def test_exp_family_execution_matches_the_kalman_filter():
    linear = _domain(LinearGaussianObservation([[1.0]], [[0.5]]))
    exp_family = _domain(gaussian_exp_family([[1.0]], [[0.5]]))
    state = np.array([0.3])

    a = linear.execute(state, linear.initial_node(None), "right", np.random.default_rng(4))
    b = exp_family.execute(state, exp_family.initial_node(None), "right", np.random.default_rng(4))

    assert np.allclose(a.state, b.state)
    assert np.allclose(a.node.factors[0].mean, b.node.factors[0].mean, atol=1e-9)
    assert np.allclose(a.node.factors[0].cov, b.node.factors[0].cov, atol=1e-9)
    assert a.node.factors[0].cov[0, 0] < 1.1  # predicted variance


def test_unobserved_execution_only_predicts(rng):
    domain = _domain(None)
    out = domain.execute(np.zeros(1), domain.initial_node(None), "left", rng)
    assert np.allclose(out.node.factors[0].mean, [-1.0])
    assert np.allclose(out.node.factors[0].cov, [[1.1]])
