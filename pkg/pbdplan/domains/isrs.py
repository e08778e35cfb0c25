"""
Information Search RockSample

An agent on an n x n grid explores and samples k rocks whose values
(good = 1, bad = 0) are hidden. Every step it receives one binary reading
per rock whose accuracy depends on the distance to that rock's information
beacon:

    p(z_i = 1 | s_i) = 0.5 + (s_i - 0.5) 2^(-d_i / D0)

Movement is deterministic and fully observable. Moving east off the last
column exits the grid and ends the episode.

The Gaussian planners keep one N(mu_i, var_i) belief per rock and update it
with the exponential-family Kalman filter on the Bernoulli link; MAD keeps
the exact Bernoulli probability per rock.
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Literal, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from pbdplan.belief import BeliefDistribution, ExpFamilyObservation, LinearDynamics, StepModel, efkf_update, kalman_predict
from pbdplan.domains.base import BeliefNode, DiscreteNode, DomainAdapter, StepOutcome
from pbdplan.errors import InvalidInput
from pbdplan.gaussian import Gaussian, as_vector, frozen
from pbdplan.macros import MacroAction
from pbdplan.rewards import PolynomialReward, expected_reward_poly

logger = logging.getLogger(__name__)

ACTIONS = ("N", "S", "E", "W", "SAMPLE")
MOVES = {"N": (0, 1), "S": (0, -1), "E": (1, 0), "W": (-1, 0)}
SAMPLE = "SAMPLE"

# Linearization points stay away from 0 and 1 so the logit link stays finite
MEAN_CLAMP = (1e-4, 1.0 - 1e-4)

Cell = tuple[int, int]


# ===== Scenario =====

class IsrsSpec(BaseModel):
    """
    Grid layout, sensing and reward constants

    D0 defaults to n / 4 when not given; rock values are drawn per episode
    when not fixed.
    """
    model_config = ConfigDict(frozen=True)

    domain: Literal["isrs"] = "isrs"
    n: int = Field(8, ge=2)
    rocks: list[Cell] = Field(..., min_length=1)
    beacons: list[Cell] = Field(..., min_length=1)
    start: Cell = (0, 0)
    rock_values: list[int] | None = None
    d0: float | None = Field(None, gt=0)
    r_good: float = 10.0
    r_bad: float = -10.0
    r_exit: float = 5.0
    prior_mean: float = Field(0.5, ge=0.0, le=1.0)
    prior_var: float = Field(0.25, gt=0.0)
    gamma: float = Field(0.99, gt=0.0, le=1.0)
    max_steps: int = Field(100, ge=0)

    @model_validator(mode="after")
    def check_layout(self) -> "IsrsSpec":
        if len(self.beacons) != len(self.rocks):
            raise ValueError(f"{len(self.rocks)} rocks but {len(self.beacons)} beacons")
        for cell in [*self.rocks, *self.beacons, self.start]:
            if not (0 <= cell[0] < self.n and 0 <= cell[1] < self.n):
                raise ValueError(f"cell {cell} outside the {self.n}x{self.n} grid")
        if len(set(self.rocks)) != len(self.rocks):
            raise ValueError("two rocks share a cell")
        if self.rock_values is not None:
            if len(self.rock_values) != len(self.rocks):
                raise ValueError("rock_values must give one value per rock")
            if any(v not in (0, 1) for v in self.rock_values):
                raise ValueError("rock values are 0 (bad) or 1 (good)")
        return self

    @property
    def k(self) -> int:
        return len(self.rocks)

    @property
    def sensor_range(self) -> float:
        return self.d0 if self.d0 is not None else self.n / 4.0

    @classmethod
    def random_layout(cls, n: int, k: int, rng: np.random.Generator, **overrides) -> "IsrsSpec":
        """Distinct random rock cells, random beacon cells, agent starting at (0, 0)"""
        if k > n * n - 1:
            raise InvalidInput(f"cannot place {k} rocks on a {n}x{n} grid")
        cells = [(x, y) for x in range(n) for y in range(n) if (x, y) != (0, 0)]
        picked = rng.choice(len(cells), size=k, replace=False)
        rocks = [cells[i] for i in picked]
        beacons = [(int(x), int(y)) for x, y in rng.integers(0, n, size=(k, 2))]
        return cls(n=n, rocks=rocks, beacons=beacons, **overrides)


@dataclass(frozen=True)
class IsrsContext:
    """Fully observable part of the state"""
    pos: Cell
    collected: tuple[bool, ...]
    exited: bool = False


@dataclass(frozen=True)
class IsrsState:
    pos: Cell
    rock_values: tuple[int, ...]
    collected: tuple[bool, ...]
    terminated: bool = False

    @property
    def context(self) -> IsrsContext:
        return IsrsContext(self.pos, self.collected, self.terminated)


# ===== Geometry =====

def rock_at(spec: IsrsSpec, pos: Cell) -> int | None:
    for i, rock in enumerate(spec.rocks):
        if tuple(rock) == tuple(pos):
            return i
    return None


def move(spec: IsrsSpec, pos: Cell, action: str) -> tuple[Cell, bool]:
    """New position and whether the move exits the grid; walls clip in place"""
    if action not in MOVES:
        return pos, False
    dx, dy = MOVES[action]
    x, y = pos[0] + dx, pos[1] + dy
    if x >= spec.n:
        return pos, True
    if not (0 <= x < spec.n and 0 <= y < spec.n):
        return pos, False
    return (x, y), False


def diagonal_path(start: Cell, goal: Cell) -> list[str]:
    """
    Shortest grid path that alternates axes as often as possible

    Each move reduces the axis with the larger remaining displacement; on a
    tie it switches away from the axis just used (x first).
    """
    x, y = start
    gx, gy = goal
    path: list[str] = []
    last = None
    while (x, y) != (gx, gy):
        dx, dy = abs(gx - x), abs(gy - y)
        use_x = dx > dy or (dx == dy and last != "x")
        if use_x:
            step = "E" if gx > x else "W"
            x += 1 if gx > x else -1
            last = "x"
        else:
            step = "N" if gy > y else "S"
            y += 1 if gy > y else -1
            last = "y"
        path.append(step)
    return path


def _sensor_strength(spec: IsrsSpec, pos: Cell) -> np.ndarray:
    """2^(-d_i / D0) for every rock from the agent at pos"""
    beacons = np.asarray(spec.beacons, dtype=float)
    d = np.hypot(beacons[:, 0] - pos[0], beacons[:, 1] - pos[1])
    return np.exp2(-d / spec.sensor_range)


# ===== Observation model =====

def isrs_observe(spec: IsrsSpec, state: IsrsState, rng: np.random.Generator) -> np.ndarray:
    """One binary reading per rock from the agent's current cell"""
    c = _sensor_strength(spec, state.pos)
    p_one = 0.5 + (np.asarray(state.rock_values, dtype=float) - 0.5) * c
    return (rng.random(spec.k) < p_one).astype(int)


def isrs_links(agent_pos: Cell, beacon: Cell, d0: float) -> ExpFamilyObservation:
    """
    Bernoulli reading of one rock as an exponential family

    theta = logit(0.5 + (s - 0.5) c), beta = log(1 + e^theta), so
    beta_dot = sigmoid(theta) and beta_ddot = p (1 - p). The link and its
    Jacobian clamp s to MEAN_CLAMP before evaluating.
    """
    if d0 <= 0:
        raise InvalidInput("sensor range D0 must be positive")
    d = math.hypot(beacon[0] - agent_pos[0], beacon[1] - agent_pos[1])
    c = 2.0 ** (-d / d0)

    def prob(s):
        s = np.clip(as_vector(s), *MEAN_CLAMP)
        return 0.5 + (s - 0.5) * c

    def link(s):
        p = prob(s)
        return np.log(p / (1.0 - p))

    def jacobian(s):
        p = prob(s)
        return np.atleast_2d(c / (p * (1.0 - p)))

    def sigmoid(theta):
        return 1.0 / (1.0 + np.exp(-as_vector(theta)))

    def beta_ddot(theta):
        p = sigmoid(theta)
        return np.atleast_2d(p * (1.0 - p))

    def sample(theta, rng):
        return (rng.random(1) < sigmoid(theta)).astype(float)

    return ExpFamilyObservation(link=link, link_jacobian=jacobian, beta_dot=sigmoid,
                                beta_ddot=beta_ddot, sampler=sample)


def bernoulli_posterior(probs: np.ndarray, z: np.ndarray, strength: np.ndarray) -> np.ndarray:
    """Exact Bayes update of P(s_i = 1) after reading z_i with sensor strength c_i"""
    like_good = np.where(z == 1, 0.5 + 0.5 * strength, 0.5 - 0.5 * strength)
    like_bad = np.where(z == 1, 0.5 - 0.5 * strength, 0.5 + 0.5 * strength)
    num = probs * like_good
    den = num + (1.0 - probs) * like_bad
    # both likelihoods vanish only for an impossible reading
    return np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), probs)


# ===== Dynamics and rewards =====

def isrs_step(spec: IsrsSpec, state: IsrsState, action: str, rng: np.random.Generator | None = None) -> tuple[IsrsState, float]:
    """Deterministic move or sample; exiting pays r_exit and terminates"""
    if action not in ACTIONS:
        raise InvalidInput(f"unknown ISRS action {action!r}")
    if state.terminated:
        return state, 0.0
    if action == SAMPLE:
        i = rock_at(spec, state.pos)
        if i is None or state.collected[i]:
            return state, 0.0
        collected = tuple(c or j == i for j, c in enumerate(state.collected))
        reward = spec.r_good if state.rock_values[i] == 1 else spec.r_bad
        return replace(state, collected=collected), reward
    pos, exited = move(spec, state.pos, action)
    if exited:
        return replace(state, terminated=True), spec.r_exit
    return replace(state, pos=pos), 0.0


def isrs_reward_model(spec: IsrsSpec) -> PolynomialReward:
    """Sampling a rock with value s pays r_bad + (r_good - r_bad) s, linear in s"""
    return PolynomialReward({SAMPLE: [(spec.r_good - spec.r_bad, (1,)), (spec.r_bad, (0,))]})


def isrs_macros(spec: IsrsSpec, context: IsrsContext) -> list[MacroAction]:
    """
    Paths to every rock, every beacon and the nearest exit (2k + 1 macros)

    Standing on an uncollected rock doubles the set with copies that sample
    first. A path of length 0 becomes a single SAMPLE.
    """
    macros = []
    for kind, cells in (("rock", spec.rocks), ("beacon", spec.beacons)):
        for i, cell in enumerate(cells):
            path = diagonal_path(context.pos, tuple(cell)) or [SAMPLE]
            macros.append(MacroAction(tuple(path), label=f"{kind}:{i}"))
    macros.append(MacroAction(("E",) * (spec.n - context.pos[0]), label="exit"))

    here = rock_at(spec, context.pos)
    if here is not None and not context.collected[here]:
        macros += [m.prefixed(SAMPLE, label=f"sample+{m.label}") for m in macros]
    return macros


# ===== Adapter =====

class IsrsDomain(DomainAdapter):
    name = "isrs"
    supports_discrete = True

    def __init__(self, spec: IsrsSpec):
        self.spec = spec
        self.gamma = spec.gamma
        self.default_max_steps = spec.max_steps
        self.reward = isrs_reward_model(spec)
        self._static = LinearDynamics.static(1)

    # ===== Planning side =====

    def primitive_actions(self, context) -> tuple[str, ...]:
        return ACTIONS

    def generate_macros(self, node) -> list[MacroAction]:
        return isrs_macros(self.spec, node.context)

    def is_terminal(self, context: IsrsContext) -> bool:
        return context.exited

    def next_context(self, context: IsrsContext, action: str) -> IsrsContext:
        if action == SAMPLE:
            i = rock_at(self.spec, context.pos)
            if i is None:
                return context
            return replace(context, collected=tuple(c or j == i for j, c in enumerate(context.collected)))
        pos, exited = move(self.spec, context.pos, action)
        return replace(context, pos=pos, exited=exited)

    def step_models(self, context, next_context: IsrsContext, action, means=None) -> list[StepModel]:
        if next_context.exited:
            return [StepModel(self._static, None, control=np.zeros(1)) for _ in self.spec.rocks]
        d0 = self.spec.sensor_range
        return [
            StepModel(self._static, isrs_links(next_context.pos, tuple(beacon), d0), control=np.zeros(1))
            for beacon in self.spec.beacons
        ]

    def step_reward(self, context: IsrsContext, action, before: Sequence[BeliefDistribution],
                    after: Sequence[BeliefDistribution], rng) -> float:
        if action == SAMPLE:
            i = rock_at(self.spec, context.pos)
            if i is None or context.collected[i]:
                return 0.0
            return expected_reward_poly(before[i], SAMPLE, self.reward)
        if action == "E" and context.pos[0] == self.spec.n - 1:
            return self.spec.r_exit
        return 0.0

    def sample_step(self, context, next_context: IsrsContext, action, beliefs: Sequence[Gaussian],
                    rng: np.random.Generator) -> list[Gaussian]:
        """One reading per rock drawn at the belief mean, then the efKF of every rock"""
        if next_context.exited:
            return list(beliefs)
        m = np.array([b.mean[0] for b in beliefs])
        p_one = 0.5 + (np.clip(m, 0.0, 1.0) - 0.5) * _sensor_strength(self.spec, next_context.pos)
        z = (rng.random(len(beliefs)) < p_one).astype(float)
        return self._update_rocks(context, next_context, action, beliefs, z)

    def _update_rocks(self, context, next_context: IsrsContext, action, beliefs: Sequence[Gaussian],
                      z: np.ndarray) -> list[Gaussian]:
        out = []
        for i, (belief, model) in enumerate(zip(beliefs, self.step_models(context, next_context, action))):
            predicted = kalman_predict(belief, model.control_for(action), model.dynamics)
            out.append(self.clamp_factor(efkf_update(predicted, z[i:i + 1], model.observation)))
        return out

    def clamp_factor(self, belief: Gaussian) -> Gaussian:
        if 0.0 <= belief.mean[0] <= 1.0:
            return belief
        return Gaussian(np.clip(belief.mean, 0.0, 1.0), belief.cov)

    # ===== Exact discrete beliefs =====

    def discrete_step(self, context: IsrsContext, next_context: IsrsContext, action, probs: np.ndarray,
                      rng: np.random.Generator) -> tuple[float, np.ndarray]:
        reward = 0.0
        if action == SAMPLE:
            i = rock_at(self.spec, context.pos)
            if i is not None and not context.collected[i]:
                reward = self.spec.r_good * probs[i] + self.spec.r_bad * (1.0 - probs[i])
        elif action == "E" and context.pos[0] == self.spec.n - 1:
            reward = self.spec.r_exit
        if next_context.exited:
            return float(reward), probs
        c = _sensor_strength(self.spec, next_context.pos)
        z = (rng.random(probs.size) < 0.5 + (probs - 0.5) * c).astype(int)
        return float(reward), frozen(bernoulli_posterior(probs, z, c))

    # ===== Execution side =====

    def initial_state(self, rng: np.random.Generator) -> IsrsState:
        if self.spec.rock_values is not None:
            values = tuple(self.spec.rock_values)
        else:
            values = tuple(int(v) for v in rng.integers(0, 2, size=self.spec.k))
        return IsrsState(tuple(self.spec.start), values, (False,) * self.spec.k)

    def initial_node(self, state: IsrsState, discrete: bool = False):
        if discrete:
            return DiscreteNode(state.context, frozen(np.full(self.spec.k, self.spec.prior_mean)))
        prior = Gaussian(np.array([self.spec.prior_mean]), np.array([[self.spec.prior_var]]))
        return BeliefNode(state.context, (prior,) * self.spec.k)

    def execute(self, state: IsrsState, node, action, rng: np.random.Generator) -> StepOutcome:
        new_state, reward = isrs_step(self.spec, state, action, rng)
        ctx = new_state.context
        if new_state.terminated:
            node = DiscreteNode(ctx, node.probs) if isinstance(node, DiscreteNode) else BeliefNode(ctx, node.factors)
            return StepOutcome(new_state, node, reward, True)

        z = isrs_observe(self.spec, new_state, rng)
        if isinstance(node, DiscreteNode):
            probs = bernoulli_posterior(node.probs, z, _sensor_strength(self.spec, new_state.pos))
            return StepOutcome(new_state, DiscreteNode(ctx, frozen(probs)), reward, False)
        factors = tuple(self._update_rocks(state.context, ctx, action, node.factors, z.astype(float)))
        return StepOutcome(new_state, BeliefNode(ctx, factors), reward, False)
