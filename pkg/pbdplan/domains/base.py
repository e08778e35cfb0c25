"""
Domain adapter contract

A domain tells the planners how its fully observable context moves, which
belief factors it tracks, which step models and rewards apply, and which
macro-actions to search. Planners only ever read from an adapter during a
search; the real world changes in execute(), between searches.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from pbdplan.belief import (
    BeliefDistribution,
    StepModel,
    kalman_predict,
    propagate_pbd_step,
    sample_observation,
    update_belief,
)
from pbdplan.errors import UnsupportedDomain
from pbdplan.gaussian import Gaussian
from pbdplan.macros import Action, MacroAction

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class BeliefNode:
    """Fully observable context plus one Gaussian belief per independent factor"""
    context: Any
    factors: tuple[Gaussian, ...]


@dataclass(frozen=True, eq=False)
class DiscreteNode:
    """Context plus an exact factored Bernoulli belief: probs[i] = P(factor i == 1)"""
    context: Any
    probs: np.ndarray


@dataclass(frozen=True)
class StepOutcome:
    """What the world returned after executing one primitive action"""
    state: Any
    node: Any
    reward: float
    done: bool


class DomainAdapter(ABC):
    """Interface every benchmark domain implements"""

    name: str = "domain"
    gamma: float = 0.95
    default_max_steps: int = 100
    supports_discrete: bool = False
    # step_reward draws random numbers
    needs_reward_rng: bool = False

    # ===== Planning side =====

    @abstractmethod
    def primitive_actions(self, context) -> Sequence[Action]:
        """All primitive actions available in a context"""

    @abstractmethod
    def generate_macros(self, node) -> list[MacroAction]:
        """Macro-actions to search from a node (never empty)"""

    @abstractmethod
    def next_context(self, context, action):
        """Noise-free transition of the fully observable context"""

    def is_terminal(self, context) -> bool:
        return False

    @abstractmethod
    def step_models(self, context, next_context, action, means: Sequence[np.ndarray]) -> Sequence[StepModel]:
        """
        One StepModel per belief factor for the step context -> next_context

        means holds the current mean of every factor, for domains whose
        surrogate dynamics are linearized about the belief.
        """

    @abstractmethod
    def step_reward(self, context, action, before: Sequence[BeliefDistribution],
                    after: Sequence[BeliefDistribution], rng: np.random.Generator | None) -> float:
        """Expected reward of one primitive step given the factor distributions around it"""

    def propagate(self, context, next_context, action, dists: Sequence[BeliefDistribution]) -> list[BeliefDistribution]:
        """Advance every factor's posterior belief distribution by one step"""
        models = self.step_models(context, next_context, action, [bd.mean_of_means for bd in dists])
        return [
            propagate_pbd_step(bd, model.control_for(action), model.dynamics, model.observation)
            for bd, model in zip(dists, models)
        ]

    def sample_step(self, context, next_context, action, beliefs: Sequence[Gaussian],
                    rng: np.random.Generator) -> list[Gaussian]:
        """Advance every factor's belief with one sampled observation"""
        out = []
        models = self.step_models(context, next_context, action, [b.mean for b in beliefs])
        for belief, model in zip(beliefs, models):
            predicted = kalman_predict(belief, model.control_for(action), model.dynamics)
            obs = model.observation_for(predicted)
            if obs is None:
                out.append(predicted)
                continue
            z = sample_observation(predicted, obs, rng)
            out.append(self.clamp_factor(update_belief(predicted, z, obs)))
        return out

    def clamp_factor(self, belief: Gaussian) -> Gaussian:
        return belief

    # ===== Exact discrete beliefs (MAD) =====

    def discrete_step(self, context, next_context, action, probs: np.ndarray,
                      rng: np.random.Generator) -> tuple[float, np.ndarray]:
        """Expected reward and sampled-observation Bayes update of a factored Bernoulli belief"""
        raise UnsupportedDomain(f"{self.name} has no discrete belief representation")

    # ===== Hand-coded policies =====

    def approach_action(self, context, factor_index: int, factors: Sequence[Gaussian]) -> Action:
        """First primitive action of the path toward a factor"""
        raise UnsupportedDomain(f"{self.name} does not support worst-target policies")

    def has_arrived(self, context, factor_index: int, factors: Sequence[Gaussian]) -> bool:
        raise UnsupportedDomain(f"{self.name} does not support worst-target policies")

    # ===== Execution side =====

    @abstractmethod
    def initial_state(self, rng: np.random.Generator):
        """True world state for a new episode"""

    @abstractmethod
    def initial_node(self, state, discrete: bool = False):
        """Agent's starting belief for the given state (Gaussian or discrete)"""

    @abstractmethod
    def execute(self, state, node, action, rng: np.random.Generator) -> StepOutcome:
        """Apply an action to the world, observe, and update the executed belief"""

    def format_action(self, action) -> str:
        return str(action)
