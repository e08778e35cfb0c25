import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal, norm

from pbdplan.belief import LinearGaussianObservation, kalman_predict, kalman_update
from pbdplan.domains import BeliefNode, TargetMonitorDomain, TmSpec
from pbdplan.domains.target_monitor import (
    HOVER,
    Region,
    TargetSpec,
    TmContext,
    TmState,
    clip_pose,
    in_fov,
    region_mass,
    report_values,
    straight_path,
    target_dynamics,
    tm_belief_update,
    tm_expected_obs_cov,
    tm_macros,
    tm_obs_cov,
    tm_observe,
    tm_report,
    tm_step,
    wrap_angle,
)
from pbdplan.errors import InvalidPose
from pbdplan.gaussian import Gaussian, RandomStream, sample_gaussian
from pbdplan.planner import plan, wt_policy
from pbdplan.schemas import PlannerConfig, PlannerKind


@pytest.fixture
def spec():
    return TmSpec()


@pytest.fixture
def domain(spec):
    return TargetMonitorDomain(spec)


def _belief(x, y, theta=0.0, var=1.0):
    return Gaussian([x, y, theta], np.diag([var, var, 0.01]))


# ===== Sensor model =====

def test_expected_cov_directly_below(spec):
    agent = (20.0, 30.0, 10.0)
    cov = tm_expected_obs_cov(spec, Gaussian([20.0, 30.0, 0.0], np.zeros((3, 3))), agent)
    assert np.allclose(cov[:2, :2], (spec.c1 * 10.0 + spec.c3) * np.eye(2))
    assert cov[2, 2] == spec.theta_obs_var


def test_expected_cov_grows_with_target_uncertainty(spec):
    agent = (20.0, 30.0, 8.0)
    sigma = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 0.1]])
    base = tm_expected_obs_cov(spec, Gaussian([24.0, 27.0, 0.0], sigma), agent)
    doubled = tm_expected_obs_cov(spec, Gaussian([24.0, 27.0, 0.0], 2 * sigma), agent)
    assert np.allclose(doubled[:2, :2] - base[:2, :2], (spec.c2 / 8.0) * sigma[:2, :2])
    assert np.all(np.linalg.eigvalsh(doubled[:2, :2]) > np.linalg.eigvalsh(base[:2, :2]))
    assert np.allclose(base, base.T)
    assert np.linalg.eigvalsh(base).min() > 0.0


def test_expected_cov_matches_sampled_average(spec, rng):
    agent = (50.0, 50.0, 12.0)
    belief = Gaussian([55.0, 44.0, 0.3], np.array([[3.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 0.05]]))
    targets = sample_gaussian(belief, rng, size=200_000)
    offsets = targets[:, :2] - np.array(agent[:2])
    avg = (spec.c1 * 12.0 + spec.c3) * np.eye(2) + (spec.c2 / 12.0) * (offsets.T @ offsets) / len(offsets)
    expected = tm_expected_obs_cov(spec, belief, agent)[:2, :2]
    assert np.allclose(avg, expected, rtol=0.02)


def test_non_positive_altitude_is_rejected(spec):
    with pytest.raises(InvalidPose):
        tm_expected_obs_cov(spec, _belief(1.0, 1.0), (0.0, 0.0, 0.0))
    with pytest.raises(InvalidPose):
        tm_obs_cov(spec, (1.0, 1.0), (0.0, 0.0, -1.0))


def test_field_of_view_grows_with_altitude(spec):
    assert in_fov(spec, (10.0, 0.0), (0.0, 0.0, 10.0))
    assert not in_fov(spec, (10.0, 0.0), (0.0, 0.0, 5.0))


def test_observations_only_inside_the_field_of_view(spec, rng):
    state = TmState((10.0, 10.0, 4.0), np.array([[12.0, 10.0, 0.1], [80.0, 80.0, 0.0]]))
    readings = tm_observe(spec, state, rng)
    assert readings[0] is not None and readings[1] is None


def test_noiseless_observation_returns_the_pose(rng):
    quiet = TmSpec(c1=0.0, c2=0.0, c3=1e-12, theta_obs_var=1e-12)
    state = TmState((10.0, 10.0, 4.0), np.array([[12.0, 11.0, 0.5], [13.0, 9.0, -0.2]]))
    for reading, target in zip(tm_observe(quiet, state, rng), state.targets):
        assert np.allclose(reading, target, atol=1e-4)


def test_huge_field_of_view_sees_every_target(rng):
    wide = TmSpec(fov_slope=1e6)
    state = TmState((0.0, 0.0, 1.0), np.array([[99.0, 99.0, 0.0], [50.0, 1.0, 0.0]]))
    assert all(r is not None for r in tm_observe(wide, state, rng))


# ===== Target model =====

def test_wrap_angle():
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert np.allclose(wrap_angle(np.array([0.0, 2 * math.pi + 0.1])), [0.0, 0.1])


def test_surrogate_prediction_matches_simulator(rng):
    spec = TmSpec(targets=[TargetSpec(x=50.0, y=50.0, theta=0.6, v=1.5, omega=0.0)], agent_noise=0.0,
                  v_noise=0.2, position_noise=0.05)
    start = TmState((10.0, 10.0, 10.0), np.array([[50.0, 50.0, 0.6]]))
    ends = np.array([tm_step(spec, start, HOVER, rng)[0].targets[0] for _ in range(20_000)])

    dyn, control = target_dynamics(spec, spec.targets[0], 0.6)
    predicted = kalman_predict(Gaussian(start.targets[0], np.zeros((3, 3))), control, dyn)
    assert np.allclose(ends[:, :2].mean(axis=0), predicted.mean[:2], atol=0.02)
    assert np.allclose(np.cov(ends[:, :2].T), predicted.cov[:2, :2], rtol=0.05, atol=0.005)


def test_no_reading_only_predicts(spec):
    belief = _belief(30.0, 40.0, theta=0.0)
    out = tm_belief_update(spec, 0, belief, (0.0, 0.0, 10.0), None)
    dyn, control = target_dynamics(spec, spec.targets[0], 0.0)
    expected = kalman_predict(belief, control, dyn)
    assert np.allclose(out.mean, expected.mean)
    assert np.allclose(out.cov, expected.cov)


def test_reading_below_the_agent_is_a_kalman_update(spec):
    belief = _belief(30.0, 40.0, theta=0.2)
    agent = (31.0, 40.0, 6.0)
    z = np.array([31.0, 40.0, 0.2])
    out = tm_belief_update(spec, 0, belief, agent, z)
    dyn, control = target_dynamics(spec, spec.targets[0], 0.2)
    predicted = kalman_predict(belief, control, dyn)
    expected = kalman_update(predicted, z, LinearGaussianObservation(np.eye(3), tm_obs_cov(spec, z, agent)))
    assert np.allclose(out.mean, expected.mean)
    assert np.allclose(out.cov, expected.cov)


def test_watching_a_parked_target_shrinks_uncertainty(rng):
    spec = TmSpec(targets=[TargetSpec(x=50.0, y=50.0, v=0.0, omega=0.0)], v_noise=0.0, omega_noise=0.0,
                  position_noise=0.0)
    belief = _belief(51.0, 49.0, var=4.0)
    agent = (50.0, 50.0, 5.0)
    traces = [np.trace(belief.cov)]
    for _ in range(10):
        z = np.array([50.0, 50.0, 0.0]) + rng.normal(0.0, 0.1, size=3)
        belief = tm_belief_update(spec, 0, belief, agent, z)
        traces.append(np.trace(belief.cov))
    assert all(b <= a + 1e-12 for a, b in zip(traces, traces[1:]))


def test_simulator_moves_targets_forward(rng):
    still = TmSpec(targets=[TargetSpec(x=20.0, y=20.0, theta=0.0, v=2.0)], v_noise=0.0, omega_noise=0.0,
                   position_noise=0.0, agent_noise=0.0)
    state = TmState((10.0, 10.0, 10.0), np.array([[20.0, 20.0, 0.0]]))
    new_state, reward = tm_step(still, state, HOVER, rng)
    assert np.allclose(new_state.targets[0], [22.0, 20.0, 0.0])
    assert new_state.agent == (10.0, 10.0, 10.0)
    assert reward == 0.0
    _, reward = tm_step(still, state, (3.0, 4.0, 0.0), rng)
    assert reward == pytest.approx(-0.5)


def test_agent_stays_inside_the_world(spec):
    assert clip_pose(spec, (-5.0, 120.0, 0.0)) == (0.0, 100.0, spec.min_altitude)


# ===== Reports =====

def test_report_decision(spec):
    inside = Gaussian([25.0, 25.0, 0.0], np.diag([0.01, 0.01, 0.01]))
    outside = Gaussian([50.0, 50.0, 0.0], np.diag([0.01, 0.01, 0.01]))
    assert tm_report(spec, inside) == (True, pytest.approx(spec.r_correct))
    assert tm_report(spec, outside) == (False, 0.0)


def test_report_value_is_best_of_both_reports(spec):
    cov = np.diag([25.0, 25.0, 0.01])
    means = np.array([[x, 25.0, 0.0] for x in np.linspace(0.0, 60.0, 31)])
    p_in = region_mass(spec, means, cov)
    brute = np.maximum(p_in * spec.r_correct + (1 - p_in) * spec.r_wrong, 0.0)
    assert np.allclose(report_values(spec, means, cov), brute)
    assert np.all((p_in >= 0.0) & (p_in <= 1.0))


def test_region_mass_of_a_wide_belief(spec):
    region = Region(x_min=0.0, x_max=10.0, y_min=0.0, y_max=10.0)
    single = spec.model_copy(update={"regions": [region]})
    mass = region_mass(single, np.array([[5.0, 5.0, 0.0]]), np.diag([1e6, 1e6, 1.0]))[0]
    assert mass == pytest.approx((10.0 / math.sqrt(2 * math.pi * 1e6)) ** 2, rel=1e-3)


def _rectangle_mass(mean, cov, region):
    """Inclusion-exclusion over scipy's bivariate normal CDF"""
    corners = np.array([
        [region.x_max, region.y_max], [region.x_min, region.y_max],
        [region.x_max, region.y_min], [region.x_min, region.y_min],
    ])
    cdf = multivariate_normal(mean, cov).cdf(corners)
    return cdf[0] - cdf[1] - cdf[2] + cdf[3]


def test_region_mass_includes_xy_correlation(spec, rng):
    for _ in range(20):
        mean = rng.uniform(0.0, 100.0, size=2)
        sx, sy, rho = rng.uniform(2.0, 15.0), rng.uniform(2.0, 15.0), rng.uniform(-0.95, 0.95)
        cov = np.diag([sx * sx, sy * sy, 0.01])
        cov[0, 1] = cov[1, 0] = rho * sx * sy
        expected = sum(_rectangle_mass(mean, cov[:2, :2], r) for r in spec.regions)
        got = region_mass(spec, np.array([[mean[0], mean[1], 0.0]]), cov)[0]
        assert got == pytest.approx(expected, abs=2e-4)


def test_correlation_changes_the_mass(spec):
    single = spec.model_copy(update={"regions": [Region(x_min=10.0, x_max=40.0, y_min=10.0, y_max=40.0)]})
    mean = np.array([[25.0, 25.0, 0.0]])
    independent = np.diag([225.0, 225.0, 0.01])
    correlated = independent.copy()
    correlated[0, 1] = correlated[1, 0] = 0.9 * 225.0

    inside_1sd = norm.cdf(1.0) - norm.cdf(-1.0)
    assert region_mass(single, mean, independent)[0] == pytest.approx(inside_1sd ** 2, rel=1e-9)
    assert region_mass(single, mean, correlated)[0] > inside_1sd ** 2 + 0.05


def test_region_mass_with_the_mean_on_a_corner(spec):
    single = spec.model_copy(update={"regions": [Region(x_min=10.0, x_max=40.0, y_min=10.0, y_max=40.0)]})
    mass = region_mass(single, np.array([[10.0, 10.0, 0.0]]), np.diag([0.01, 0.01, 0.01]))[0]
    assert mass == pytest.approx(0.25, abs=1e-9)


# ===== Macros and planning =====

def test_straight_path_steps(spec):
    path = straight_path(spec, (0.0, 0.0, 10.0), (12.0, 0.0, 10.0))
    assert len(path) == 3
    assert np.allclose(np.sum(path, axis=0), [12.0, 0.0, 0.0])
    assert all(np.linalg.norm(step) <= spec.max_step + 1e-9 for step in path)
    assert straight_path(spec, (5.0, 5.0, 5.0), (5.0, 5.0, 5.0)) == [(0.0, 0.0, 0.0)]


def test_macro_set(spec, domain):
    node = domain.initial_node(domain.initial_state(np.random.default_rng(0)))
    macros = tm_macros(spec, node)
    assert len(macros) == len(spec.targets) * len(spec.altitudes) + 1
    assert macros[-1].label == "hover"
    assert len(macros[-1]) == spec.hover_steps


def test_pbd_plans_a_move(domain):
    node = domain.initial_node(domain.initial_state(np.random.default_rng(0)))
    result = plan(node, domain, PlannerConfig(kind=PlannerKind.PBD, depth=1, samples=2), RandomStream(0))
    assert len(result.action) == 3
    assert len(result.q_values) == 5


def test_planning_observations_follow_the_field_of_view(domain):
    ctx = TmContext((50.0, 50.0, 2.0))
    near = _belief(50.5, 50.0)
    far = _belief(90.0, 10.0)
    models = domain.step_models(ctx, ctx, HOVER, [near.mean, far.mean])
    predicted_near = kalman_predict(near, models[0].control_for(HOVER), models[0].dynamics)
    predicted_far = kalman_predict(far, models[1].control_for(HOVER), models[1].dynamics)
    assert models[0].observation_for(predicted_near) is not None
    assert models[1].observation_for(predicted_far) is None


# ===== Worst-target policies =====

def test_worst_target_heads_for_the_largest_trace(domain):
    node = BeliefNode(TmContext((50.0, 50.0, 10.0)), (_belief(80.0, 50.0, var=1.0), _belief(20.0, 50.0, var=9.0)))
    action, committed = wt_policy(node, PlannerKind.WT_SINGLE, domain)
    assert committed is None
    assert action[0] < 0.0


def test_worst_target_ties_go_to_the_first(domain):
    node = BeliefNode(TmContext((50.0, 50.0, 10.0)), (_belief(80.0, 50.0), _belief(20.0, 50.0)))
    action, _ = wt_policy(node, PlannerKind.WT_SINGLE, domain)
    assert action[0] > 0.0


def test_macro_worst_target_keeps_its_commitment(domain):
    ctx = TmContext((50.0, 50.0, 10.0))
    node = BeliefNode(ctx, (_belief(80.0, 50.0, var=9.0), _belief(20.0, 50.0, var=1.0)))
    action, committed = wt_policy(node, PlannerKind.WT_MACRO, domain)
    assert committed == 0 and action[0] > 0.0

    swapped = BeliefNode(ctx, (_belief(80.0, 50.0, var=1.0), _belief(20.0, 50.0, var=9.0)))
    action, committed = wt_policy(swapped, PlannerKind.WT_MACRO, domain, committed)
    assert committed == 0 and action[0] > 0.0

    arrived = BeliefNode(TmContext((80.0, 50.0, min(domain.spec.altitudes))), swapped.factors)
    action, committed = wt_policy(arrived, PlannerKind.WT_MACRO, domain, committed)
    assert committed == 1 and action[0] < 0.0


def test_executed_step_scores_reports(domain):
    rng = np.random.default_rng(4)
    state = domain.initial_state(rng)
    node = domain.initial_node(state)
    outcome = domain.execute(state, node, HOVER, rng)
    assert not outcome.done
    assert len(outcome.node.factors) == len(domain.spec.targets)
    assert domain.format_action((1.0, -2.0, 0.5)) == "(1.000, -2.000, 0.500)"
