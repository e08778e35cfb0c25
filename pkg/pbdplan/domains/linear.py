"""
Single-factor linear-Gaussian planning problem

The plainest domain the planners run on: one Gaussian belief, fixed linear
dynamics and observation model, named control actions and any reward model.
The cross-planner consistency checks are built on it.
"""
import logging
from typing import Literal, Mapping, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from pbdplan.belief import (
    BeliefDistribution,
    LinearDynamics,
    LinearGaussianObservation,
    ObservationModel,
    StepModel,
    kalman_predict,
    update_belief,
)
from pbdplan.domains.base import BeliefNode, DomainAdapter, StepOutcome
from pbdplan.errors import UnsupportedDomain
from pbdplan.gaussian import Gaussian, as_vector, sample_gaussian
from pbdplan.macros import MacroAction
from pbdplan.rewards import (
    GaussianMixtureReward,
    MixtureComponent,
    PolynomialReward,
    RewardModel,
    SampledReward,
    expected_reward,
    state_reward,
)

logger = logging.getLogger(__name__)

Matrix = list[list[float]]


# ===== Scenario file schema =====

class MixtureSpec(BaseModel):
    weight: float
    center: list[float]
    spread: Matrix


class TermSpec(BaseModel):
    weight: float
    exponents: list[int]


class LinearRewardSpec(BaseModel):
    """Either Gaussian-mixture components or polynomial terms, keyed by action name"""
    kind: Literal["gmm", "poly"] = "gmm"
    components: dict[str, list[MixtureSpec]] = Field(default_factory=dict)
    terms: dict[str, list[TermSpec]] = Field(default_factory=dict)

    def build(self) -> RewardModel:
        if self.kind == "gmm":
            return GaussianMixtureReward({
                action: [MixtureComponent(c.weight, c.center, c.spread) for c in comps]
                for action, comps in self.components.items()
            })
        return PolynomialReward({
            action: [(t.weight, tuple(t.exponents)) for t in terms]
            for action, terms in self.terms.items()
        })


class LinearSpec(BaseModel):
    """
    Linear-Gaussian problem as written in a scenario file

    C and Q are optional together; without them the agent never observes.
    """
    model_config = ConfigDict(frozen=True)

    domain: Literal["linear"] = "linear"
    A: Matrix
    B: Matrix
    P: Matrix
    C: Matrix | None = None
    Q: Matrix | None = None
    controls: dict[str, list[float]] = Field(..., min_length=1)
    initial_mean: list[float]
    initial_cov: Matrix
    reward: LinearRewardSpec
    gamma: float = Field(0.95, gt=0.0, le=1.0)
    macro_length: int = Field(1, ge=1)
    max_steps: int = Field(50, ge=0)

    @model_validator(mode="after")
    def check_observation(self) -> "LinearSpec":
        if (self.C is None) != (self.Q is None):
            raise ValueError("C and Q must be given together")
        return self


class LinearGaussianDomain(DomainAdapter):
    name = "linear"

    def __init__(
        self,
        dynamics: LinearDynamics,
        observation: ObservationModel | None,
        controls: Mapping[str, Sequence[float]],
        reward: RewardModel,
        initial_belief: Gaussian,
        gamma: float = 0.95,
        macro_length: int = 1,
        macros: Sequence[MacroAction] | None = None,
        max_steps: int = 50,
    ):
        self.dynamics = dynamics
        self.observation = observation
        self.controls = {name: as_vector(u) for name, u in controls.items()}
        self.reward = reward
        self.needs_reward_rng = isinstance(reward, SampledReward)
        self.initial_belief = initial_belief
        self.gamma = gamma
        self.default_max_steps = max_steps
        if macros is None:
            # One constant-control macro per action
            macros = [MacroAction((name,) * macro_length, label=name) for name in self.controls]
        self.macros = list(macros)
        self._models = {name: StepModel(dynamics, observation, control=u) for name, u in self.controls.items()}

    @classmethod
    def from_spec(cls, spec: LinearSpec) -> "LinearGaussianDomain":
        observation = None
        if spec.C is not None:
            observation = LinearGaussianObservation(np.asarray(spec.C), np.asarray(spec.Q))
        return cls(
            LinearDynamics(np.asarray(spec.A), np.asarray(spec.B), np.asarray(spec.P)),
            observation,
            spec.controls,
            spec.reward.build(),
            Gaussian(spec.initial_mean, spec.initial_cov),
            gamma=spec.gamma,
            macro_length=spec.macro_length,
            max_steps=spec.max_steps,
        )

    # ===== Planning side =====

    def primitive_actions(self, context) -> list[str]:
        return list(self.controls)

    def generate_macros(self, node) -> list[MacroAction]:
        return list(self.macros)

    def next_context(self, context, action):
        return context

    def step_models(self, context, next_context, action, means=None) -> list[StepModel]:
        return [self._models[action]]

    def step_reward(self, context, action, before: Sequence[BeliefDistribution],
                    after: Sequence[BeliefDistribution], rng) -> float:
        return expected_reward(before[0], action, self.reward, rng)

    # ===== Execution side =====

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return sample_gaussian(self.initial_belief, rng)

    def initial_node(self, state, discrete: bool = False) -> BeliefNode:
        return BeliefNode(context=None, factors=(self.initial_belief,))

    def execute(self, state, node: BeliefNode, action, rng: np.random.Generator) -> StepOutcome:
        reward = state_reward(self.reward, state, action)
        u = self.controls[action]
        dyn = self.dynamics
        noise = sample_gaussian(Gaussian(np.zeros(state.size), dyn.P), rng)
        new_state = dyn.A @ state + dyn.B @ u + noise

        predicted = kalman_predict(node.factors[0], u, dyn)
        z = None
        obs = self.observation
        if isinstance(obs, LinearGaussianObservation):
            z = obs.C @ new_state + sample_gaussian(Gaussian(np.zeros(obs.Q.shape[0]), obs.Q), rng)
        elif obs is not None:
            if obs.sampler is None:
                raise UnsupportedDomain("cannot execute: the observation model has no sampler")
            z = obs.sampler(as_vector(obs.link(new_state)), rng)
        posterior = update_belief(predicted, z, obs) if z is not None else predicted
        return StepOutcome(new_state, BeliefNode(None, (posterior,)), reward, False)
