"""
Belief engine

Kalman and exponential-family Kalman (efKF) belief updates, and exact
propagation of the posterior distribution over Gaussian beliefs along a
macro-action.

After a linear-Gaussian step every reachable posterior belief shares one
covariance, and the posterior means are themselves Gaussian, so the set of
beliefs reachable under all observation sequences is N(m, S_mu) x delta(S).
None of the quantities below depend on the observations actually received.

The exp-family carrier term kappa(z) never appears: it cancels out of every
update equation.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy import linalg

from pbdplan.errors import DimensionError, InvalidInput, LinkEvaluationError, NumericalFailure, SingularCovariance
from pbdplan.gaussian import Gaussian, as_matrix, as_vector, frozen, sample_gaussian, symmetrize
from pbdplan.macros import MacroAction

logger = logging.getLogger(__name__)

GaussianBelief = Gaussian


# ===== Models =====

@dataclass(frozen=True, eq=False)
class LinearDynamics:
    """s_t = A s_{t-1} + B a_t + eps,  eps ~ N(0, P)"""
    A: np.ndarray
    B: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        A, B, P = as_matrix(self.A), as_matrix(self.B), as_matrix(self.P)
        d = A.shape[0]
        if A.shape != (d, d):
            raise DimensionError(f"A must be square, got {A.shape}")
        if B.shape[0] != d:
            raise DimensionError(f"B has {B.shape[0]} rows, expected {d}")
        if P.shape != (d, d):
            raise DimensionError(f"P must be {d}x{d}, got {P.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "P", symmetrize(P))

    @classmethod
    def static(cls, dim: int) -> "LinearDynamics":
        """State never changes (e.g. rock values)"""
        return cls(np.eye(dim), np.zeros((dim, 1)), np.zeros((dim, dim)))


@dataclass(frozen=True, eq=False)
class LinearGaussianObservation:
    """z_t = C s_t + delta,  delta ~ N(0, Q)"""
    C: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        C, Q = as_matrix(self.C), as_matrix(self.Q)
        if Q.shape != (C.shape[0], C.shape[0]):
            raise DimensionError(f"Q must be {C.shape[0]}x{C.shape[0]}, got {Q.shape}")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "Q", symmetrize(Q))


@dataclass(frozen=True, eq=False)
class ExpFamilyObservation:
    """
    p(z | theta) = exp(z^T theta - beta(theta) + kappa(z)),  theta = W(s)

    link:          W(s) -> theta
    link_jacobian: Y(s) = d theta / d s, shape (k, D)
    beta_dot:      first derivative of beta, E[z | theta]
    beta_ddot:     second derivative of beta, Var[z | theta]
    sampler:       optional draw of z given theta (used by observation-sampling planners)
    """
    link: Callable[[np.ndarray], np.ndarray]
    link_jacobian: Callable[[np.ndarray], np.ndarray]
    beta_dot: Callable[[np.ndarray], np.ndarray]
    beta_ddot: Callable[[np.ndarray], np.ndarray]
    sampler: Callable[[np.ndarray, np.random.Generator], np.ndarray] | None = field(default=None, repr=False)


ObservationModel = Union[LinearGaussianObservation, ExpFamilyObservation]
# A step may observe nothing, or build its model from the predicted belief
ObservationSource = Union[ObservationModel, Callable[[Gaussian], "ObservationModel | None"], None]


def gaussian_exp_family(C, Q) -> ExpFamilyObservation:
    """
    The linear-Gaussian observation written as an exponential family

    theta = Q^-1 C s, beta(theta) = theta^T Q theta / 2, so beta_dot = C s and
    beta_ddot = Q. efKF with this model reproduces the Kalman filter.
    """
    C, Q = as_matrix(C), symmetrize(as_matrix(Q))
    Q_inv_C = linalg.solve(Q, C, assume_a="pos")

    def sample(theta, rng):
        return sample_gaussian(Gaussian(Q @ theta, Q), rng)

    return ExpFamilyObservation(
        link=lambda s: Q_inv_C @ s,
        link_jacobian=lambda s: Q_inv_C,
        beta_dot=lambda theta: Q @ theta,
        beta_ddot=lambda theta: Q,
        sampler=sample,
    )


@dataclass(frozen=True, eq=False)
class StepModel:
    """
    Models for one primitive step of one belief factor

    control overrides the primitive action as the B-multiplied input, which
    lets domains with symbolic actions ("N", "SAMPLE") feed numeric controls.
    """
    dynamics: LinearDynamics
    observation: ObservationSource = None
    control: np.ndarray | None = None

    def control_for(self, action) -> np.ndarray:
        if self.control is not None:
            return as_vector(self.control)
        return as_vector(action)

    def observation_for(self, predicted: Gaussian) -> ObservationModel | None:
        return resolve_observation(self.observation, predicted)


def resolve_observation(source: ObservationSource, predicted: Gaussian) -> ObservationModel | None:
    if source is None or isinstance(source, (LinearGaussianObservation, ExpFamilyObservation)):
        return source
    return source(predicted)


@dataclass(frozen=True, eq=False)
class BeliefDistribution:
    """
    Gaussian distribution over Gaussian beliefs

    Belief means are distributed N(mean_of_means, cov_of_means); every belief
    in the set has covariance belief_cov.
    """
    mean_of_means: np.ndarray
    cov_of_means: np.ndarray
    belief_cov: np.ndarray

    def __post_init__(self):
        m = as_vector(self.mean_of_means)
        cm, bc = as_matrix(self.cov_of_means), as_matrix(self.belief_cov)
        if cm.shape != (m.size, m.size) or bc.shape != (m.size, m.size):
            raise DimensionError("belief distribution dimensions disagree")
        object.__setattr__(self, "mean_of_means", frozen(m))
        object.__setattr__(self, "cov_of_means", frozen(cm))
        object.__setattr__(self, "belief_cov", frozen(bc))

    @classmethod
    def from_belief(cls, b: Gaussian) -> "BeliefDistribution":
        """Point mass on a single known belief (no spread of means)"""
        return cls(b.mean, np.zeros_like(b.cov), b.cov)

    @property
    def dim(self) -> int:
        return self.mean_of_means.size

    @property
    def mean_belief(self) -> Gaussian:
        return Gaussian(self.mean_of_means, self.belief_cov)

    def marginal(self) -> Gaussian:
        """State distribution with the belief mean integrated out"""
        return Gaussian(self.mean_of_means, self.belief_cov + self.cov_of_means)


# ===== Linear algebra helpers =====

def _linearize(obs: ObservationModel, mean: np.ndarray):
    """
    Return (H, R, R_inv) so the update looks like z = H s + N(0, R)

    Linear-Gaussian: H = C, R = Q. Exp-family: H = Y evaluated at mean,
    R = beta_ddot^-1 at theta = W(mean).
    """
    if isinstance(obs, LinearGaussianObservation):
        if obs.C.shape[1] != mean.size:
            raise DimensionError(f"C has {obs.C.shape[1]} columns for a {mean.size}-D state")
        try:
            q_factor = linalg.cho_factor(obs.Q, lower=True)
        except linalg.LinAlgError as exc:
            raise SingularCovariance("observation noise Q is not positive definite") from exc
        return obs.C, obs.Q, linalg.cho_solve(q_factor, np.eye(obs.Q.shape[0]))

    theta = as_vector(obs.link(mean))
    Y = as_matrix(obs.link_jacobian(mean)).reshape(theta.size, mean.size)
    bdd = symmetrize(as_matrix(obs.beta_ddot(theta)))
    try:
        bdd_factor = linalg.cho_factor(bdd, lower=True)
    except linalg.LinAlgError as exc:
        raise LinkEvaluationError(f"beta_ddot is not positive definite at theta={theta}") from exc
    return Y, linalg.cho_solve(bdd_factor, np.eye(theta.size)), bdd


def _gain(pred_cov: np.ndarray, H: np.ndarray, R: np.ndarray) -> np.ndarray:
    S = symmetrize(H @ pred_cov @ H.T + R)
    try:
        return linalg.solve(S, H @ pred_cov, assume_a="pos").T
    except linalg.LinAlgError as exc:
        raise SingularCovariance("innovation covariance is singular") from exc


def _posterior_cov(pred_cov, H, R, R_inv, K) -> np.ndarray:
    """
    (pred_cov^-1 + H^T R^-1 H)^-1, falling back to the Joseph form when the
    predicted covariance is singular
    """
    d = pred_cov.shape[0]
    try:
        pred_factor = linalg.cho_factor(pred_cov, lower=True)
        pred_cov_inv = linalg.cho_solve(pred_factor, np.eye(d))
        info = symmetrize(pred_cov_inv + H.T @ R_inv @ H)
        return symmetrize(linalg.cho_solve(linalg.cho_factor(info, lower=True), np.eye(d)))
    except linalg.LinAlgError:
        logger.debug("information-form covariance update failed, using Joseph form")
    I_KH = np.eye(d) - K @ H
    joseph = symmetrize(I_KH @ pred_cov @ I_KH.T + K @ R @ K.T)
    if not np.all(np.isfinite(joseph)):
        raise NumericalFailure("covariance update failed in both information and Joseph form")
    return joseph


# ===== Filters =====

def kalman_predict(b: Gaussian, a, dyn: LinearDynamics) -> Gaussian:
    """Process update: (A mu + B a, A S A^T + P)"""
    a = as_vector(a)
    if b.dim != dyn.A.shape[0]:
        raise DimensionError(f"{b.dim}-D belief with {dyn.A.shape[0]}-D dynamics")
    if a.size != dyn.B.shape[1]:
        raise DimensionError(f"action of size {a.size}, B expects {dyn.B.shape[1]}")
    mean = dyn.A @ b.mean + dyn.B @ a
    cov = symmetrize(dyn.A @ b.cov @ dyn.A.T + dyn.P)
    return Gaussian(mean, cov)


def kalman_update(b_pred: Gaussian, z, obs: LinearGaussianObservation) -> Gaussian:
    """
    Measurement update

    mu = mu_bar + K (z - C mu_bar), S = (C^T Q^-1 C + S_bar^-1)^-1.
    The covariance does not depend on z.
    """
    z = as_vector(z)
    H, R, R_inv = _linearize(obs, b_pred.mean)
    if z.size != H.shape[0]:
        raise DimensionError(f"observation of size {z.size}, model expects {H.shape[0]}")
    K = _gain(b_pred.cov, H, R)
    mean = b_pred.mean + K @ (z - H @ b_pred.mean)
    return Gaussian(mean, _posterior_cov(b_pred.cov, H, R, R_inv, K))


def efkf_update(b_pred: Gaussian, z, obs: ExpFamilyObservation) -> Gaussian:
    """
    Exponential-family Kalman filter update, linearized at the predicted mean

    z_tilde = theta_hat - beta_ddot^-1 (beta_dot - z) projects z onto the
    canonical-parameter space; then mu = mu_bar + K (z_tilde - theta_hat)
    with K = S_bar Y^T (Y S_bar Y^T + beta_ddot^-1)^-1 and
    S = (S_bar^-1 + Y^T beta_ddot Y)^-1.
    """
    z = as_vector(z)
    theta = as_vector(obs.link(b_pred.mean))
    Y, r_equiv, bdd = _linearize(obs, b_pred.mean)
    if z.size != theta.size:
        raise DimensionError(f"observation of size {z.size}, model expects {theta.size}")
    beta_dot = as_vector(obs.beta_dot(theta))
    # z_tilde - theta_hat
    innovation = r_equiv @ (z - beta_dot)
    K = _gain(b_pred.cov, Y, r_equiv)
    mean = b_pred.mean + K @ innovation
    return Gaussian(mean, _posterior_cov(b_pred.cov, Y, r_equiv, bdd, K))


def update_belief(b_pred: Gaussian, z, obs: ObservationModel | None) -> Gaussian:
    if obs is None:
        return b_pred
    if isinstance(obs, LinearGaussianObservation):
        return kalman_update(b_pred, z, obs)
    return efkf_update(b_pred, z, obs)


def sample_observation(b_pred: Gaussian, obs: ObservationModel, rng: np.random.Generator) -> np.ndarray:
    """
    Draw z from the predictive distribution of a predicted belief

    Linear-Gaussian: z ~ N(C mu_bar, C S_bar C^T + Q). Exp-family: draw a
    state from the belief and then z from the model's sampler.
    """
    if isinstance(obs, LinearGaussianObservation):
        predictive = Gaussian(obs.C @ b_pred.mean, obs.C @ b_pred.cov @ obs.C.T + obs.Q)
        return sample_gaussian(predictive, rng)
    if obs.sampler is None:
        raise InvalidInput("exponential-family model has no sampler")
    state = sample_gaussian(b_pred, rng)
    return as_vector(obs.sampler(as_vector(obs.link(state)), rng))


# ===== Posterior belief distributions =====

def propagate_pbd_step(bd: BeliefDistribution, a, dyn: LinearDynamics, obs: ObservationSource) -> BeliefDistribution:
    """
    One step of the posterior belief distribution

    m' = A m + B a; S_mu' = A S_mu A^T + S_bar H^T K^T; S' from the filter's
    covariance update. Exp-family models are linearized at the propagated
    mean of means. A step without observation only runs the process update.
    """
    a = as_vector(a)
    if bd.dim != dyn.A.shape[0] or a.size != dyn.B.shape[1]:
        raise DimensionError("belief distribution, action and dynamics dimensions disagree")
    A = dyn.A
    mean = A @ bd.mean_of_means + dyn.B @ a
    pred_cov = symmetrize(A @ bd.belief_cov @ A.T + dyn.P)
    spread = symmetrize(A @ bd.cov_of_means @ A.T)

    model = resolve_observation(obs, Gaussian(mean, pred_cov))
    if model is None:
        return BeliefDistribution(mean, spread, pred_cov)

    H, R, R_inv = _linearize(model, mean)
    K = _gain(pred_cov, H, R)
    post_cov = _posterior_cov(pred_cov, H, R, R_inv, K)
    spread = symmetrize(spread + pred_cov @ H.T @ K.T)
    return BeliefDistribution(mean, spread, post_cov)


def propagate_pbd_macro(b0: Gaussian, macro: MacroAction | Sequence, models: Sequence[StepModel]) -> list[BeliefDistribution]:
    """
    Posterior belief distribution after each primitive step of a macro

    models[i] holds the dynamics/observation (and optional numeric control)
    of step i. Output i is the distribution after i + 1 steps.
    """
    actions = tuple(getattr(macro, "actions", macro))
    if not actions:
        raise InvalidInput("macro-action is empty")
    if len(models) != len(actions):
        raise DimensionError(f"{len(models)} step models for a macro of length {len(actions)}")

    bd = BeliefDistribution.from_belief(b0)
    out = []
    for action, model in zip(actions, models):
        bd = propagate_pbd_step(bd, model.control_for(action), model.dynamics, model.observation)
        out.append(bd)
    return out


def sample_posterior_beliefs(bd: BeliefDistribution, n_samples: int, rng: np.random.Generator) -> list[Gaussian]:
    """
    Sample beliefs from the distribution

    Only the mean is random; every belief shares bd.belief_cov.
    """
    if n_samples < 1:
        raise InvalidInput("need at least one posterior sample")
    means = sample_gaussian(Gaussian(bd.mean_of_means, bd.cov_of_means), rng, size=n_samples)
    return [Gaussian(mu, bd.belief_cov) for mu in means]
