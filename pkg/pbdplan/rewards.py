"""
Expected reward of primitive actions under beliefs and belief distributions

Closed forms exist for two reward families: weighted sums of Gaussians and
polynomials of the state. Anything else is estimated by sampling. Under a
belief distribution N(m, S_mu) x delta(S) the state is marginally
N(m, S + S_mu), which is what every estimator integrates against.
"""
import logging
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Hashable, Mapping, Sequence, Union

import numpy as np

from pbdplan.belief import BeliefDistribution, StepModel, propagate_pbd_macro
from pbdplan.config import get_settings
from pbdplan.errors import InvalidInput, UnsupportedOrder
from pbdplan.gaussian import Gaussian, as_matrix, as_vector, central_moment, gaussian_pdf, sample_gaussian
from pbdplan.macros import MacroAction

logger = logging.getLogger(__name__)

# Key used when a reward applies to every action
ANY_ACTION = None


def _key(action) -> Hashable:
    if isinstance(action, np.ndarray):
        return tuple(action.tolist())
    return action


def _lookup(table: Mapping, action):
    key = _key(action)
    if key in table:
        return table[key]
    return table.get(ANY_ACTION)


# ===== Reward models =====

@dataclass(frozen=True, eq=False)
class MixtureComponent:
    weight: float
    center: np.ndarray
    spread: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "center", as_vector(self.center))
        object.__setattr__(self, "spread", as_matrix(self.spread))


@dataclass(frozen=True, eq=False)
class GaussianMixtureReward:
    """r(s, a) = sum_j w_j N(s | center_j, spread_j), one component list per action"""
    components: Mapping[Hashable, Sequence[MixtureComponent]]

    def for_action(self, action) -> Sequence[MixtureComponent]:
        return _lookup(self.components, action) or ()


@dataclass(frozen=True, eq=False)
class PolynomialReward:
    """r(s, a) = sum_j w_j prod_d s_d^e_jd, terms given as (w_j, exponents_j)"""
    terms: Mapping[Hashable, Sequence[tuple[float, tuple[int, ...]]]]

    def for_action(self, action) -> Sequence[tuple[float, tuple[int, ...]]]:
        return _lookup(self.terms, action) or ()

    @property
    def degree(self) -> int:
        return max((sum(exps) for terms in self.terms.values() for _, exps in terms), default=0)


@dataclass(frozen=True, eq=False)
class SampledReward:
    """
    Black-box state reward

    With vectorized=True each callable receives the whole (N, D) sample
    array and returns N rewards; otherwise it is called once per state.
    """
    functions: Mapping[Hashable, Callable]
    n_samples: int = 1000
    vectorized: bool = field(default=False)

    def for_action(self, action) -> Callable | None:
        return _lookup(self.functions, action)


RewardModel = Union[GaussianMixtureReward, PolynomialReward, SampledReward]
# (means (N, D), shared covariance) -> N rewards
BeliefRewardFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


# ===== Expected rewards =====

def expected_reward_gmm(bd: BeliefDistribution, action, reward: GaussianMixtureReward) -> float:
    """sum_j w_j N(center_j | m, spread_j + S + S_mu)"""
    base = bd.belief_cov + bd.cov_of_means
    total = 0.0
    for comp in reward.for_action(action):
        if comp.weight == 0.0:
            continue
        total += comp.weight * gaussian_pdf(Gaussian(bd.mean_of_means, comp.spread + base), comp.center)
    return float(total)


def raw_moment(g: Gaussian, exponents, max_order: int | None = None) -> float:
    """
    E[prod_d s_d^e_d] under g

    Expands each (m_d + x_d)^e_d binomially about the mean so only central
    moments of the zero-mean part are needed.
    """
    exps = tuple(int(e) for e in np.atleast_1d(exponents))
    cap = get_settings().moment_order_cap if max_order is None else max_order
    if sum(exps) > cap:
        raise UnsupportedOrder(f"polynomial degree {sum(exps)} exceeds moment cap {cap}")
    total = 0.0
    for ks in product(*(range(e + 1) for e in exps)):
        if sum(ks) % 2:
            continue
        coeff = 1.0
        for e, k, m in zip(exps, ks, g.mean):
            coeff *= math.comb(e, k) * m ** (e - k)
        if coeff != 0.0:
            total += coeff * central_moment(g.cov, ks, max_order=cap)
    return total


def expected_reward_poly(bd: BeliefDistribution, action, reward: PolynomialReward) -> float:
    """sum_j w_j E[s^e_j] under N(m, S + S_mu)"""
    marginal = bd.marginal()
    return float(sum(w * raw_moment(marginal, exps) for w, exps in reward.for_action(action)))


def expected_reward_sampled(bd: BeliefDistribution, action, reward: SampledReward, rng: np.random.Generator) -> float:
    """Monte Carlo mean of r over states drawn from N(m, S + S_mu)"""
    if reward.n_samples < 1:
        raise InvalidInput("sampled reward needs at least one sample")
    fn = reward.for_action(action)
    if fn is None:
        return 0.0
    states = sample_gaussian(bd.marginal(), rng, size=reward.n_samples)
    if reward.vectorized:
        values = np.asarray(fn(states), dtype=float)
    else:
        values = np.array([fn(s) for s in states], dtype=float)
    return float(values.mean())


def expected_belief_reward_sampled(bd: BeliefDistribution, fn: BeliefRewardFn, n_samples: int,
                                   rng: np.random.Generator | None) -> float:
    """
    Average of a belief-level reward over posterior beliefs

    For rewards that depend on the whole belief (e.g. a report decision made
    from the belief) rather than on the state. Exact when the belief means
    do not spread.
    """
    if not np.any(bd.cov_of_means) or rng is None:
        return float(np.asarray(fn(bd.mean_of_means[None, :], bd.belief_cov), dtype=float)[0])
    if n_samples < 1:
        raise InvalidInput("belief reward needs at least one sample")
    means = sample_gaussian(Gaussian(bd.mean_of_means, bd.cov_of_means), rng, size=n_samples)
    return float(np.mean(fn(means, bd.belief_cov)))


def expected_reward(bd: BeliefDistribution, action, reward: RewardModel, rng: np.random.Generator | None = None) -> float:
    if isinstance(reward, GaussianMixtureReward):
        return expected_reward_gmm(bd, action, reward)
    if isinstance(reward, PolynomialReward):
        return expected_reward_poly(bd, action, reward)
    if rng is None:
        raise InvalidInput("sampled rewards need a random generator")
    return expected_reward_sampled(bd, action, reward, rng)


def state_reward(reward: RewardModel, state, action) -> float:
    """r(s, a) at a single known state"""
    s = as_vector(state)
    if isinstance(reward, GaussianMixtureReward):
        return float(sum(c.weight * gaussian_pdf(Gaussian(c.center, c.spread), s) for c in reward.for_action(action)))
    if isinstance(reward, PolynomialReward):
        return float(sum(w * np.prod(s ** np.asarray(exps, dtype=float)) for w, exps in reward.for_action(action)))
    fn = reward.for_action(action)
    if fn is None:
        return 0.0
    if reward.vectorized:
        return float(np.asarray(fn(s[None, :]), dtype=float)[0])
    return float(fn(s))


def macro_expected_reward(b0: Gaussian, macro: MacroAction | Sequence, models: Sequence[StepModel],
                          reward: RewardModel, gamma: float, rng: np.random.Generator | None = None) -> float:
    """
    Expected discounted reward of a macro-action

    r(b0, a_1) + sum_{i>=2} gamma^(i-1) r(b_dist^(i-1), a_i): each step is
    scored under the belief distribution reached before taking it.
    """
    actions = tuple(getattr(macro, "actions", macro))
    dists = propagate_pbd_macro(b0, actions, models)
    before = [BeliefDistribution.from_belief(b0)] + dists[:-1]
    total = 0.0
    for i, (action, bd) in enumerate(zip(actions, before)):
        if gamma == 0.0 and i > 0:
            break
        total += gamma ** i * expected_reward(bd, action, reward, rng)
    return total
