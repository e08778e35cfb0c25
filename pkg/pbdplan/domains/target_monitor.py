"""
TargetMonitor

A helicopter flies over a 100 m x 100 m x 20 m world and must decide, every
step, whether each of several moving targets is inside an area of interest.
Correct "in region" reports are rewarded, wrong ones penalized, "not in
region" reports pay nothing; moving costs a little per metre.

A camera sees targets inside a disc below the agent whose radius grows with
altitude. Observations are the target pose (x, y, theta) in global
coordinates, with translational noise

    g = C1 h I + (C2 / h) (p_t - p_a)(p_t - p_a)^T + C3 I

so flying low is accurate but covers less ground. The targets move as
unicycles with noisy velocities; the planners model them with a
constant-velocity linear surrogate about the current heading estimate and
use the expected observation covariance under the predicted belief.
"""
import logging
import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import owens_t
from scipy.stats import norm

from pbdplan.belief import (
    BeliefDistribution,
    LinearDynamics,
    LinearGaussianObservation,
    StepModel,
    kalman_predict,
    kalman_update,
)
from pbdplan.domains.base import BeliefNode, DomainAdapter, StepOutcome
from pbdplan.errors import InvalidPose
from pbdplan.gaussian import Gaussian, as_vector, sample_gaussian
from pbdplan.macros import MacroAction
from pbdplan.rewards import expected_belief_reward_sampled

logger = logging.getLogger(__name__)

Pose = tuple[float, float, float]
HOVER = (0.0, 0.0, 0.0)


# ===== Scenario =====

class Region(BaseModel):
    """Axis-aligned area of interest"""
    model_config = ConfigDict(frozen=True)

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    @model_validator(mode="after")
    def check_bounds(self) -> "Region":
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValueError("region bounds must satisfy min < max")
        return self


class TargetSpec(BaseModel):
    """Initial pose and nominal velocities of one target"""
    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    theta: float = 0.0
    v: float = 1.0
    omega: float = 0.0


class TmSpec(BaseModel):
    """
    World, sensor, target and reward constants

    Noise parameters are variances. The field of view is a disc of radius
    fov_slope * h centred below the agent.
    """
    model_config = ConfigDict(frozen=True)

    domain: Literal["target_monitor"] = "target_monitor"
    width: float = Field(100.0, gt=0)
    length: float = Field(100.0, gt=0)
    height: float = Field(20.0, gt=0)
    min_altitude: float = Field(1.0, gt=0)

    regions: list[Region] = Field(default_factory=lambda: [
        Region(x_min=10.0, x_max=40.0, y_min=10.0, y_max=40.0),
        Region(x_min=60.0, x_max=90.0, y_min=60.0, y_max=90.0),
    ])
    targets: list[TargetSpec] = Field(default_factory=lambda: [
        TargetSpec(x=30.0, y=50.0, theta=-math.pi / 2, v=1.0, omega=0.02),
        TargetSpec(x=70.0, y=50.0, theta=math.pi / 2, v=1.0, omega=-0.02),
    ], min_length=1)
    v_noise: float = Field(0.05, ge=0)
    omega_noise: float = Field(0.001, ge=0)
    position_noise: float = Field(0.05, ge=0)
    prior_position_var: float = Field(4.0, gt=0)
    prior_theta_var: float = Field(0.05, gt=0)

    agent_start: Pose = (50.0, 50.0, 10.0)
    agent_noise: float = Field(0.05, ge=0)
    max_step: float = Field(5.0, gt=0)
    dt: float = Field(1.0, gt=0)
    altitudes: tuple[float, ...] = (5.0, 15.0)
    hover_steps: int = Field(4, ge=1)
    arrive_tolerance: float = Field(1.0, gt=0)

    c1: float = Field(0.02, ge=0)
    c2: float = Field(0.05, ge=0)
    c3: float = Field(0.1, ge=0)
    theta_obs_var: float = Field(0.01, gt=0)
    fov_slope: float = Field(1.5, gt=0)

    r_correct: float = 10.0
    r_wrong: float = -10.0
    motion_cost: float = Field(0.1, ge=0)
    reward_samples: int = Field(20, ge=1)
    gamma: float = Field(0.95, gt=0.0, le=1.0)
    max_steps: int = Field(200, ge=0)

    @model_validator(mode="after")
    def check_world(self) -> "TmSpec":
        for r in self.regions:
            if r.x_min < 0 or r.y_min < 0 or r.x_max > self.width or r.y_max > self.length:
                raise ValueError(f"region {r} leaves the world")
        if not self.altitudes:
            raise ValueError("at least one macro altitude is needed")
        for h in self.altitudes:
            if not self.min_altitude <= h <= self.height:
                raise ValueError(f"altitude {h} outside [{self.min_altitude}, {self.height}]")
        return self


@dataclass(frozen=True)
class TmContext:
    """Agent pose (x, y, h); fully observable"""
    agent: Pose


@dataclass(frozen=True, eq=False)
class TmState:
    agent: Pose
    targets: np.ndarray  # (T, 3): x, y, theta

    @property
    def context(self) -> TmContext:
        return TmContext(self.agent)


def wrap_angle(theta):
    """Map angles to (-pi, pi]"""
    wrapped = np.mod(np.asarray(theta, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    wrapped = np.where(wrapped == -math.pi, math.pi, wrapped)
    return float(wrapped) if np.ndim(wrapped) == 0 else wrapped


def clip_pose(spec: TmSpec, pose) -> Pose:
    x, y, h = pose
    return (
        float(np.clip(x, 0.0, spec.width)),
        float(np.clip(y, 0.0, spec.length)),
        float(np.clip(h, spec.min_altitude, spec.height)),
    )


# ===== Sensor =====

def in_fov(spec: TmSpec, target_xy, agent: Pose) -> bool:
    return math.hypot(target_xy[0] - agent[0], target_xy[1] - agent[1]) <= spec.fov_slope * agent[2]


def tm_obs_cov(spec: TmSpec, target_xy, agent: Pose) -> np.ndarray:
    """Realized observation noise for a target at target_xy seen from agent"""
    h = agent[2]
    if h <= 0:
        raise InvalidPose(f"agent altitude must be positive, got {h}")
    offset = np.asarray(target_xy, dtype=float)[:2] - np.asarray(agent[:2], dtype=float)
    cov = np.zeros((3, 3))
    cov[:2, :2] = (spec.c1 * h + spec.c3) * np.eye(2) + (spec.c2 / h) * np.outer(offset, offset)
    cov[2, 2] = spec.theta_obs_var
    return cov


def tm_expected_obs_cov(spec: TmSpec, belief: Gaussian, agent: Pose) -> np.ndarray:
    """
    Observation noise averaged over the target belief

    Translational block C1 h I + (C2 / h)((mu - p_a)(mu - p_a)^T + S_xy) + C3 I;
    the heading entry is the constant theta_obs_var.
    """
    h = agent[2]
    if h <= 0:
        raise InvalidPose(f"agent altitude must be positive, got {h}")
    expected = tm_obs_cov(spec, belief.mean[:2], agent)
    expected[:2, :2] += (spec.c2 / h) * belief.cov[:2, :2]
    return 0.5 * (expected + expected.T)


def tm_observe(spec: TmSpec, state: TmState, rng: np.random.Generator) -> list[np.ndarray | None]:
    """One noisy pose reading per target inside the field of view, None otherwise"""
    out: list[np.ndarray | None] = []
    for target in state.targets:
        if not in_fov(spec, target, state.agent):
            out.append(None)
            continue
        noise = sample_gaussian(Gaussian(np.zeros(3), tm_obs_cov(spec, target, state.agent)), rng)
        z = target + noise
        z[2] = wrap_angle(z[2])
        out.append(z)
    return out


# ===== Target model =====

def target_dynamics(spec: TmSpec, target: TargetSpec, heading: float) -> tuple[LinearDynamics, np.ndarray]:
    """
    Constant-velocity surrogate of the unicycle about a heading estimate

    Returns (dynamics, control): x' = x + u with u the nominal displacement
    along the heading; velocity noise acts along the heading, position noise
    on both axes.
    """
    dt = spec.dt
    u = np.array([math.cos(heading), math.sin(heading)])
    P = np.zeros((3, 3))
    P[:2, :2] = dt * dt * spec.v_noise * np.outer(u, u) + spec.position_noise * np.eye(2)
    P[2, 2] = dt * dt * spec.omega_noise
    control = np.array([target.v * dt * u[0], target.v * dt * u[1], target.omega * dt])
    return LinearDynamics(np.eye(3), np.eye(3), P), control


def tm_belief_update(spec: TmSpec, index: int, belief: Gaussian, agent: Pose, z: np.ndarray | None) -> Gaussian:
    """
    Process update of target index, then a Kalman update if a reading arrived

    The realized noise is evaluated at the observed position; the heading
    innovation is wrapped before the update and the heading mean after it.
    """
    dyn, control = target_dynamics(spec, spec.targets[index], float(belief.mean[2]))
    predicted = kalman_predict(belief, control, dyn)
    if z is None:
        return predicted
    z = as_vector(z).copy()
    z[2] = predicted.mean[2] + wrap_angle(z[2] - predicted.mean[2])
    obs = LinearGaussianObservation(np.eye(3), tm_obs_cov(spec, z, agent))
    posterior = kalman_update(predicted, z, obs)
    mean = posterior.mean.copy()
    mean[2] = wrap_angle(mean[2])
    return Gaussian(mean, posterior.cov)


# ===== Reports and rewards =====

def _bivariate_cdf(h: np.ndarray, k: np.ndarray, rho: float) -> np.ndarray:
    """
    P(X <= h, Y <= k) for standard normals with correlation rho, via Owen's T

    Phi2 = Phi(h)/2 + Phi(k)/2 - T(h, a_h) - T(k, a_k) - delta, with
    delta = 1/2 when h and k have opposite signs.
    """
    h = np.where(np.abs(h) < 1e-12, 1e-12, h)
    k = np.where(np.abs(k) < 1e-12, 1e-12, k)
    s = math.sqrt(1.0 - rho * rho)
    a_h = (k - rho * h) / (h * s)
    a_k = (h - rho * k) / (k * s)
    delta = np.where(h * k > 0.0, 0.0, 0.5)
    return 0.5 * norm.cdf(h) + 0.5 * norm.cdf(k) - owens_t(h, a_h) - owens_t(k, a_k) - delta


def region_mass(spec: TmSpec, means: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """
    Probability that each belief (rows of means, shared cov) puts the target
    inside an area of interest

    Exact bivariate normal mass of each rectangle, x-y correlation included,
    by inclusion-exclusion over its corners. Regions are disjoint, the total
    is clipped to 1.
    """
    means = np.atleast_2d(means)
    sx = math.sqrt(max(cov[0, 0], 1e-18))
    sy = math.sqrt(max(cov[1, 1], 1e-18))
    rho = float(np.clip(cov[0, 1] / (sx * sy), -1.0 + 1e-12, 1.0 - 1e-12))
    total = np.zeros(means.shape[0])
    for r in spec.regions:
        lo_x, hi_x = (r.x_min - means[:, 0]) / sx, (r.x_max - means[:, 0]) / sx
        lo_y, hi_y = (r.y_min - means[:, 1]) / sy, (r.y_max - means[:, 1]) / sy
        mass = (
            _bivariate_cdf(hi_x, hi_y, rho) - _bivariate_cdf(lo_x, hi_y, rho)
            - _bivariate_cdf(hi_x, lo_y, rho) + _bivariate_cdf(lo_x, lo_y, rho)
        )
        total += np.maximum(mass, 0.0)
    return np.clip(total, 0.0, 1.0)


def report_values(spec: TmSpec, means: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Expected report reward of the best decision for each belief"""
    p_in = region_mass(spec, means, cov)
    return np.maximum(0.0, p_in * spec.r_correct + (1.0 - p_in) * spec.r_wrong)


def tm_report(spec: TmSpec, belief: Gaussian) -> tuple[bool, float]:
    """Report "in region" iff its expected reward is positive; returns (report, expected reward)"""
    p_in = float(region_mass(spec, belief.mean, belief.cov)[0])
    value = p_in * spec.r_correct + (1.0 - p_in) * spec.r_wrong
    return (True, value) if value > 0.0 else (False, 0.0)


def in_region(spec: TmSpec, xy) -> bool:
    return any(r.x_min <= xy[0] <= r.x_max and r.y_min <= xy[1] <= r.y_max for r in spec.regions)


def score_reports(spec: TmSpec, state: TmState, reports: Sequence[bool]) -> float:
    return float(sum(
        (spec.r_correct if in_region(spec, target) else spec.r_wrong)
        for target, report in zip(state.targets, reports) if report
    ))


def motion_penalty(spec: TmSpec, action) -> float:
    return -spec.motion_cost * float(np.linalg.norm(action))


# ===== Simulator =====

def tm_step(spec: TmSpec, state: TmState, action, rng: np.random.Generator,
            reports: Sequence[bool] | None = None) -> tuple[TmState, float]:
    """
    Move the agent by the commanded displacement plus noise and advance
    every target one noisy unicycle step

    The reward is the motion cost, plus the report reward scored against the
    new true state when reports are given.
    """
    action = as_vector(action)
    agent_noise = rng.normal(0.0, math.sqrt(spec.agent_noise), size=3) if spec.agent_noise > 0 else np.zeros(3)
    agent = clip_pose(spec, np.asarray(state.agent) + action + agent_noise)

    dt = spec.dt
    targets = state.targets.copy()
    for i, (target, nominal) in enumerate(zip(state.targets, spec.targets)):
        v = nominal.v + rng.normal(0.0, math.sqrt(spec.v_noise))
        omega = nominal.omega + rng.normal(0.0, math.sqrt(spec.omega_noise))
        jitter = rng.normal(0.0, math.sqrt(spec.position_noise), size=2)
        x, y, theta = target
        targets[i, 0] = np.clip(x + v * math.cos(theta) * dt + jitter[0], 0.0, spec.width)
        targets[i, 1] = np.clip(y + v * math.sin(theta) * dt + jitter[1], 0.0, spec.length)
        targets[i, 2] = wrap_angle(theta + omega * dt)

    new_state = TmState(agent, targets)
    reward = motion_penalty(spec, action)
    if reports is not None:
        reward += score_reports(spec, new_state, reports)
    return new_state, reward


# ===== Macro-actions =====

def straight_path(spec: TmSpec, start: Pose, goal: Pose) -> list[tuple[float, float, float]]:
    """Equal steps no longer than max_step; a zero-length path is one zero step"""
    delta = np.asarray(goal, dtype=float) - np.asarray(start, dtype=float)
    steps = max(1, math.ceil(float(np.linalg.norm(delta)) / spec.max_step - 1e-9))
    step = tuple(float(v) for v in delta / steps)
    return [step] * steps


def tm_macros(spec: TmSpec, node: BeliefNode) -> list[MacroAction]:
    """Fly above every target's mean at every macro altitude, or hover"""
    agent = node.context.agent
    macros = []
    for i, belief in enumerate(node.factors):
        for h in spec.altitudes:
            goal = clip_pose(spec, (belief.mean[0], belief.mean[1], h))
            macros.append(MacroAction(tuple(straight_path(spec, agent, goal)), label=f"target:{i}@{h:g}"))
    macros.append(MacroAction((HOVER,) * spec.hover_steps, label="hover"))
    return macros


# ===== Adapter =====

class TargetMonitorDomain(DomainAdapter):
    name = "target_monitor"
    needs_reward_rng = True

    def __init__(self, spec: TmSpec):
        self.spec = spec
        self.gamma = spec.gamma
        self.default_max_steps = spec.max_steps

    # ===== Planning side =====

    def primitive_actions(self, context) -> list[tuple[float, float, float]]:
        s = self.spec.max_step
        return [
            HOVER,
            (s, 0.0, 0.0), (-s, 0.0, 0.0),
            (0.0, s, 0.0), (0.0, -s, 0.0),
            (0.0, 0.0, s), (0.0, 0.0, -s),
        ]

    def generate_macros(self, node) -> list[MacroAction]:
        return tm_macros(self.spec, node)

    def next_context(self, context: TmContext, action) -> TmContext:
        return TmContext(clip_pose(self.spec, np.asarray(context.agent) + as_vector(action)))

    def step_models(self, context, next_context: TmContext, action, means) -> list[StepModel]:
        models = []
        for target, mean in zip(self.spec.targets, means):
            dyn, control = target_dynamics(self.spec, target, float(mean[2]))
            models.append(StepModel(dyn, self._observation_source(next_context.agent), control=control))
        return models

    def _observation_source(self, agent: Pose):
        spec = self.spec

        def source(predicted: Gaussian):
            if not in_fov(spec, predicted.mean, agent):
                return None
            return LinearGaussianObservation(np.eye(3), tm_expected_obs_cov(spec, predicted, agent))

        return source

    def step_reward(self, context, action, before: Sequence[BeliefDistribution],
                    after: Sequence[BeliefDistribution], rng) -> float:
        spec = self.spec

        def value(means, cov):
            return report_values(spec, means, cov)

        reports = sum(expected_belief_reward_sampled(bd, value, spec.reward_samples, rng) for bd in after)
        return motion_penalty(spec, action) + reports

    # ===== Worst-target policies =====

    def _goal(self, index: int, factors: Sequence[Gaussian]) -> Pose:
        mean = factors[index].mean
        return clip_pose(self.spec, (mean[0], mean[1], min(self.spec.altitudes)))

    def approach_action(self, context: TmContext, factor_index: int, factors: Sequence[Gaussian]):
        return straight_path(self.spec, context.agent, self._goal(factor_index, factors))[0]

    def has_arrived(self, context: TmContext, factor_index: int, factors: Sequence[Gaussian]) -> bool:
        gap = np.asarray(self._goal(factor_index, factors)) - np.asarray(context.agent)
        return float(np.linalg.norm(gap)) <= self.spec.arrive_tolerance

    # ===== Execution side =====

    def initial_state(self, rng: np.random.Generator) -> TmState:
        prior = self._prior_cov()
        targets = np.array([
            sample_gaussian(Gaussian([t.x, t.y, t.theta], prior), rng) for t in self.spec.targets
        ])
        targets[:, 0] = np.clip(targets[:, 0], 0.0, self.spec.width)
        targets[:, 1] = np.clip(targets[:, 1], 0.0, self.spec.length)
        targets[:, 2] = wrap_angle(targets[:, 2])
        return TmState(clip_pose(self.spec, self.spec.agent_start), targets)

    def _prior_cov(self) -> np.ndarray:
        s = self.spec
        return np.diag([s.prior_position_var, s.prior_position_var, s.prior_theta_var])

    def initial_node(self, state: TmState, discrete: bool = False) -> BeliefNode:
        prior = self._prior_cov()
        factors = tuple(Gaussian([t.x, t.y, t.theta], prior) for t in self.spec.targets)
        return BeliefNode(state.context, factors)

    def execute(self, state: TmState, node: BeliefNode, action, rng: np.random.Generator) -> StepOutcome:
        new_state, reward = tm_step(self.spec, state, action, rng)
        readings = tm_observe(self.spec, new_state, rng)
        factors = tuple(
            tm_belief_update(self.spec, i, belief, new_state.agent, z)
            for i, (belief, z) in enumerate(zip(node.factors, readings))
        )
        reports = [tm_report(self.spec, b)[0] for b in factors]
        reward += score_reports(self.spec, new_state, reports)
        return StepOutcome(new_state, BeliefNode(new_state.context, factors), reward, False)

    def format_action(self, action) -> str:
        return "(" + ", ".join(f"{v:.3f}" for v in action) + ")"
