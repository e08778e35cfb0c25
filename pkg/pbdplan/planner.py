"""
Macro-action forward search

PBD expands each macro-action analytically: the posterior distribution over
beliefs at the end of the macro and its expected reward come out of the
belief engine in closed form, and only the successor beliefs the tree
branches on are sampled. The baselines share the same search skeleton:

    MAC        samples whole observation sequences and filters each one
    MAD        same, with an exact factored Bernoulli belief (discrete domains)
    NBO        follows only the most likely (zero-innovation) belief
    OPEN_LOOP  follows the marginal belief, never conditions on observations
    GREEDY     best one-step expected reward
    WT_*       fly to the factor with the largest uncertainty

Search values are averaged over sampled successor beliefs outside the
per-sample max over next macros, and each macro is discounted by its own
primitive length. No leaf heuristic is used.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from pbdplan.belief import BeliefDistribution, sample_posterior_beliefs
from pbdplan.domains.base import BeliefNode, DiscreteNode, DomainAdapter
from pbdplan.errors import InvalidInput, UnsupportedDomain
from pbdplan.gaussian import Gaussian, RandomStream
from pbdplan.macros import Action, MacroAction, check_macros, uncovered_actions
from pbdplan.schemas import BoundInputs, PlannerConfig, PlannerKind

logger = logging.getLogger(__name__)


@dataclass
class SearchStats:
    """Counters filled in during one search"""
    macro_evaluations: int = 0
    belief_nodes: int = 0


@dataclass(frozen=True)
class PlanResult:
    action: Action
    macro: MacroAction
    q_values: tuple[float, ...]
    stats: SearchStats = field(default_factory=SearchStats, compare=False)


def _gamma(cfg: PlannerConfig, adapter: DomainAdapter) -> float:
    return adapter.gamma if cfg.gamma is None else cfg.gamma


def _argmax(values: Sequence[float]) -> int:
    """Index of the largest value; ties go to the lowest index"""
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


# ===== Macro evaluation =====

def _evaluate_macro(node: BeliefNode, macro: MacroAction, adapter: DomainAdapter, gamma: float,
                    stream: RandomStream | None, nominal: bool = False):
    """
    Walk a macro through the belief-distribution propagation

    Returns (discounted reward, final context, final distributions, steps
    taken). Step i is scored with the distribution before it, discounted by
    gamma^i. With nominal=True the spread of belief means is dropped after
    every step (most likely belief only).
    """
    ctx = node.context
    dists = [BeliefDistribution.from_belief(f) for f in node.factors]
    rng = stream.generator() if stream is not None and adapter.needs_reward_rng else None
    total = 0.0
    steps = 0
    for i, action in enumerate(macro.actions):
        if adapter.is_terminal(ctx):
            break
        nxt = adapter.next_context(ctx, action)
        after = adapter.propagate(ctx, nxt, action, dists)
        if nominal:
            after = [BeliefDistribution(bd.mean_of_means, np.zeros_like(bd.cov_of_means), bd.belief_cov) for bd in after]
        total += gamma ** i * adapter.step_reward(ctx, action, dists, after, rng)
        ctx, dists = nxt, after
        steps += 1
    return total, ctx, dists, steps


def _sample_children(ctx, dists: Sequence[BeliefDistribution], n_samples: int, adapter: DomainAdapter,
                     rng: np.random.Generator) -> list[BeliefNode]:
    per_factor = [sample_posterior_beliefs(bd, n_samples, rng) for bd in dists]
    return [
        BeliefNode(ctx, tuple(adapter.clamp_factor(b) for b in beliefs))
        for beliefs in zip(*per_factor)
    ]


def _best_value(node, adapter: DomainAdapter, cfg: PlannerConfig, depth: int, stream: RandomStream,
                expand: Callable, stats: SearchStats | None) -> float:
    macros = adapter.generate_macros(node)
    check_macros(macros)
    if stats is not None:
        stats.belief_nodes += 1
    return max(
        expand(macro, node, adapter, cfg, depth, stream.child(j), stats)
        for j, macro in enumerate(macros)
    )


# ===== Expansion rules =====

def pbd_expand(macro: MacroAction, node: BeliefNode, adapter: DomainAdapter, cfg: PlannerConfig,
               depth: int, stream: RandomStream, stats: SearchStats | None = None) -> float:
    """
    Q-value of a macro from a belief node using posterior belief distributions

    depth 0 is worth 0. Otherwise: analytic macro reward, plus gamma^L times
    the average over N_s sampled posterior beliefs of the best next macro
    evaluated at depth - 1.
    """
    if depth <= 0:
        return 0.0
    gamma = _gamma(cfg, adapter)
    if stats is not None:
        stats.macro_evaluations += 1
    reward, ctx, dists, steps = _evaluate_macro(node, macro, adapter, gamma, stream.child(0))
    if depth == 1 or adapter.is_terminal(ctx):
        return reward

    children = _sample_children(ctx, dists, cfg.samples, adapter, stream.child(1).generator())
    future = sum(
        _best_value(child, adapter, cfg, depth - 1, stream.child(2, i), pbd_expand, stats)
        for i, child in enumerate(children)
    )
    return reward + gamma ** steps * future / len(children)


def open_loop_expand(macro: MacroAction, node: BeliefNode, adapter: DomainAdapter, cfg: PlannerConfig,
                     depth: int, stream: RandomStream, stats: SearchStats | None = None) -> float:
    """
    Like PBD, but the successor is the single marginal belief N(m, S + S_mu):
    later macros are never conditioned on what would be observed
    """
    if depth <= 0:
        return 0.0
    gamma = _gamma(cfg, adapter)
    if stats is not None:
        stats.macro_evaluations += 1
    reward, ctx, dists, steps = _evaluate_macro(node, macro, adapter, gamma, stream.child(0))
    if depth == 1 or adapter.is_terminal(ctx):
        return reward
    child = BeliefNode(ctx, tuple(adapter.clamp_factor(bd.marginal()) for bd in dists))
    return reward + gamma ** steps * _best_value(child, adapter, cfg, depth - 1, stream.child(2), open_loop_expand, stats)


def nbo_expand(macro: MacroAction, node: BeliefNode, adapter: DomainAdapter, cfg: PlannerConfig,
               depth: int, stream: RandomStream | None = None, stats: SearchStats | None = None) -> float:
    """
    Nominal belief optimization value

    One belief per macro: the mean follows the process model without
    observations, the covariance gets the full filter update linearized at
    that mean. The tree branches over macros only.
    """
    if depth <= 0:
        return 0.0
    stream = stream or RandomStream(cfg.seed)
    gamma = _gamma(cfg, adapter)
    if stats is not None:
        stats.macro_evaluations += 1
    reward, ctx, dists, steps = _evaluate_macro(node, macro, adapter, gamma, stream.child(0), nominal=True)
    if depth == 1 or adapter.is_terminal(ctx):
        return reward
    child = BeliefNode(ctx, tuple(adapter.clamp_factor(bd.mean_belief) for bd in dists))
    return reward + gamma ** steps * _best_value(child, adapter, cfg, depth - 1, stream.child(2), nbo_expand, stats)


def mac_expand(macro: MacroAction, node: BeliefNode, adapter: DomainAdapter, cfg: PlannerConfig,
               depth: int, stream: RandomStream, stats: SearchStats | None = None) -> float:
    """
    Q-value by sampling N_s observation sequences along the macro

    Each trajectory filters its own belief step by step; its discounted
    reward plus the best continuation from its final belief is averaged.
    """
    if depth <= 0:
        return 0.0
    gamma = _gamma(cfg, adapter)
    if stats is not None:
        stats.macro_evaluations += 1
    rng = stream.child(1).generator()
    total = 0.0
    for i in range(cfg.samples):
        ctx = node.context
        beliefs = list(node.factors)
        value = 0.0
        steps = 0
        for j, action in enumerate(macro.actions):
            if adapter.is_terminal(ctx):
                break
            nxt = adapter.next_context(ctx, action)
            posterior = adapter.sample_step(ctx, nxt, action, beliefs, rng)
            before = [BeliefDistribution.from_belief(b) for b in beliefs]
            after = [BeliefDistribution.from_belief(b) for b in posterior]
            value += gamma ** j * adapter.step_reward(ctx, action, before, after, rng)
            ctx, beliefs = nxt, posterior
            steps += 1
        if depth > 1 and not adapter.is_terminal(ctx):
            child = BeliefNode(ctx, tuple(beliefs))
            value += gamma ** steps * _best_value(child, adapter, cfg, depth - 1, stream.child(2, i), mac_expand, stats)
        total += value
    return total / cfg.samples


def mad_expand(macro: MacroAction, node: DiscreteNode, adapter: DomainAdapter, cfg: PlannerConfig,
               depth: int, stream: RandomStream, stats: SearchStats | None = None) -> float:
    """
    MAC search over an exact factored Bernoulli belief

    Only domains with a discrete belief representation support it.
    """
    if not adapter.supports_discrete or not isinstance(node, DiscreteNode):
        raise UnsupportedDomain(f"MAD needs a discrete belief, {adapter.name} cannot provide one")
    if depth <= 0:
        return 0.0
    gamma = _gamma(cfg, adapter)
    if stats is not None:
        stats.macro_evaluations += 1
    rng = stream.child(1).generator()
    total = 0.0
    for i in range(cfg.samples):
        ctx = node.context
        probs = node.probs
        value = 0.0
        steps = 0
        for j, action in enumerate(macro.actions):
            if adapter.is_terminal(ctx):
                break
            nxt = adapter.next_context(ctx, action)
            reward, probs = adapter.discrete_step(ctx, nxt, action, probs, rng)
            value += gamma ** j * reward
            ctx = nxt
            steps += 1
        if depth > 1 and not adapter.is_terminal(ctx):
            child = DiscreteNode(ctx, probs)
            value += gamma ** steps * _best_value(child, adapter, cfg, depth - 1, stream.child(2, i), mad_expand, stats)
        total += value
    return total / cfg.samples


_EXPANDERS: dict[PlannerKind, Callable] = {
    PlannerKind.PBD: pbd_expand,
    PlannerKind.MAC: mac_expand,
    PlannerKind.MAD: mad_expand,
    PlannerKind.NBO: nbo_expand,
    PlannerKind.OPEN_LOOP: open_loop_expand,
}


# ===== Root decision =====

def plan(node, adapter: DomainAdapter, cfg: PlannerConfig, stream: RandomStream) -> PlanResult:
    """
    Score every root macro and return the first action of the best one

    Ties go to the lowest macro index. The result depends only on
    (node, cfg, stream), never on evaluation order.
    """
    expand = _EXPANDERS.get(cfg.kind)
    if expand is None:
        raise InvalidInput(f"{cfg.kind.value} is not a search planner")
    macros = adapter.generate_macros(node)
    primitives = adapter.primitive_actions(node.context)
    check_macros(macros, primitives if cfg.require_action_coverage else None)
    missing = uncovered_actions(macros, primitives)
    if missing:
        logger.debug("primitive actions not starting any macro: %s", missing)

    stats = SearchStats(belief_nodes=1)
    q_values = tuple(
        expand(macro, node, adapter, cfg, cfg.depth, stream.child(j), stats)
        for j, macro in enumerate(macros)
    )
    best = _argmax(q_values)
    logger.debug("%s: %d macros, Q=%s, chose %s", cfg.label, len(macros),
                 [round(q, 4) for q in q_values], macros[best].label)
    return PlanResult(macros[best].first, macros[best], q_values, stats)


def select_action(node, adapter: DomainAdapter, cfg: PlannerConfig, stream: RandomStream) -> Action:
    return plan(node, adapter, cfg, stream).action


def greedy_policy(node: BeliefNode, adapter: DomainAdapter, stream: RandomStream | None = None,
                  gamma: float | None = None) -> Action:
    """Primitive action with the largest expected reward for the next step"""
    stream = stream or RandomStream(0)
    gamma = adapter.gamma if gamma is None else gamma
    actions = list(adapter.primitive_actions(node.context))
    if not actions:
        raise InvalidInput("no primitive actions available")
    values = [
        _evaluate_macro(node, MacroAction((a,)), adapter, gamma, stream.child(j))[0]
        for j, a in enumerate(actions)
    ]
    return actions[_argmax(values)]


def wt_policy(node: BeliefNode, mode: PlannerKind, adapter: DomainAdapter,
              committed: int | None = None) -> tuple[Action, int | None]:
    """
    Worst-target policy: head for the factor whose belief has the largest
    covariance trace (lowest index on ties)

    WT_SINGLE picks again every step. WT_MACRO keeps the committed target
    until the agent has reached it. Returns (action, target now committed).
    """
    factors = node.factors
    if mode == PlannerKind.WT_MACRO and committed is not None and not adapter.has_arrived(node.context, committed, factors):
        target = committed
    else:
        target = _argmax([float(np.trace(f.cov)) for f in factors])
    action = adapter.approach_action(node.context, target, factors)
    if mode != PlannerKind.WT_MACRO:
        return action, None
    return action, target


# ===== Planners =====

class Planner:
    """Stateful wrapper that turns a PlannerConfig into per-step decisions"""

    discrete = False

    def __init__(self, cfg: PlannerConfig, adapter: DomainAdapter):
        self.cfg = cfg
        self.adapter = adapter

    @property
    def label(self) -> str:
        return self.cfg.label

    def reset(self) -> None:
        pass

    def act(self, node, stream: RandomStream) -> Action:
        return select_action(node, self.adapter, self.cfg, stream)


class GreedyPlanner(Planner):
    def act(self, node, stream: RandomStream) -> Action:
        return greedy_policy(node, self.adapter, stream, self.cfg.gamma)


class WorstTargetPlanner(Planner):
    def __init__(self, cfg: PlannerConfig, adapter: DomainAdapter):
        super().__init__(cfg, adapter)
        self.committed: int | None = None

    def reset(self) -> None:
        self.committed = None

    def act(self, node, stream: RandomStream) -> Action:
        action, self.committed = wt_policy(node, self.cfg.kind, self.adapter, self.committed)
        return action


class DiscretePlanner(Planner):
    discrete = True


def make_planner(cfg: PlannerConfig, adapter: DomainAdapter) -> Planner:
    if cfg.kind == PlannerKind.GREEDY:
        return GreedyPlanner(cfg, adapter)
    if cfg.kind in (PlannerKind.WT_SINGLE, PlannerKind.WT_MACRO):
        return WorstTargetPlanner(cfg, adapter)
    if cfg.kind == PlannerKind.MAD:
        if not adapter.supports_discrete:
            raise UnsupportedDomain(f"MAD cannot run on {adapter.name}")
        return DiscretePlanner(cfg, adapter)
    return Planner(cfg, adapter)


# ===== Sampling error bound =====

def value_bound(max_reward: float, gamma: float) -> float:
    """Trivial V_max: the largest per-step reward collected forever"""
    if not 0.0 < gamma < 1.0:
        raise InvalidInput("value bound needs 0 < gamma < 1")
    return max_reward / (1.0 - gamma)


def epsilon_bound(inputs: BoundInputs) -> float:
    """
    Probabilistic gap between the PBD value and a lower bound on the optimum

    eps = gamma^H V_max + 1/(1 - gamma) sqrt(V_max^2 / N_s log((M N_s)^H / delta)),
    holding with probability at least 1 - delta. The log is evaluated in
    expanded form so very large N_s does not overflow.
    """
    gamma, horizon, n, m, delta, v_max = (
        inputs.gamma, inputs.horizon, inputs.samples, inputs.max_macros, inputs.delta, inputs.v_max,
    )
    if not 0.0 < delta < 1.0:
        raise InvalidInput(f"delta must lie in (0, 1), got {delta}")
    if not 0.0 < gamma < 1.0:
        raise InvalidInput(f"gamma must lie in (0, 1) for the bound, got {gamma}")
    log_term = horizon * math.log(m * n) - math.log(delta)
    return gamma ** horizon * v_max + math.sqrt(v_max ** 2 / n * log_term) / (1.0 - gamma)
