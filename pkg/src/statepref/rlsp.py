"""Reward inference from a single observed state.

The expert is assumed to have acted soft-optimally for ``alice_horizon``
steps, starting from a state drawn from ``prior``, and to have ended in the
observed state ``s0``. Likelihood and gradient are exact dynamic programs:
forward state marginals for ``p(s0 | theta)`` and a forward accumulation of
per-step MCE IRL gradients weighted by path probability.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .mceirl import FeatureExpectations, feature_expectations, step_gradients
from .mdp import (
    InvalidInput,
    RewardParams,
    SoftPolicy,
    TabularMdp,
    forward_marginals,
    soft_value_iteration,
    state_distribution,
)

log = logging.getLogger(__name__)


class ImpossibleEvidence(ValueError):
    """The observed state has zero probability under the assumed prior and horizon."""


@dataclass(frozen=True, eq=False)
class RlspConfig:
    alice_horizon: int
    prior: np.ndarray  # distribution over the expert's first state
    step_size: float = 0.1
    max_iterations: int = 500
    convergence_tol: float = 1e-5
    theta_prior_mean: np.ndarray | None = None
    theta_prior_std: float = 1.0

    def __post_init__(self):
        if self.alice_horizon < 0:
            raise InvalidInput("alice_horizon must be >= 0")
        if not self.theta_prior_std > 0:
            raise InvalidInput("theta_prior_std must be positive")
        if not self.step_size > 0:
            raise InvalidInput("step_size must be positive")
        object.__setattr__(self, "prior", state_distribution(self.prior))

    def prior_mean(self, num_features: int) -> np.ndarray:
        if self.theta_prior_mean is None:
            return np.zeros(num_features)
        mean = np.asarray(self.theta_prior_mean, dtype=np.float64)
        if mean.shape != (num_features,):
            raise InvalidInput("theta_prior_mean has the wrong dimension")
        return mean

    def with_prior(self, mean, std: float) -> "RlspConfig":
        return replace(self, theta_prior_mean=np.asarray(mean, dtype=np.float64), theta_prior_std=std)


@dataclass(frozen=True, eq=False)
class GradState:
    marginals: np.ndarray  # (T+1, S): index k is time k - T
    G: np.ndarray  # (T+1, S, F)


@dataclass(frozen=True, eq=False)
class InferredReward:
    theta_alice: RewardParams
    final_log_posterior: float
    iterations_used: int
    converged: bool
    trace: list[float] = field(default_factory=list)

    def to_dict(self, feature_names=None) -> dict:
        names = list(feature_names) if feature_names is not None else None
        return {
            "theta_alice": self.theta_alice.theta.tolist(),
            "feature_names": names,
            "final_log_posterior": self.final_log_posterior,
            "iterations_used": self.iterations_used,
            "converged": self.converged,
            "log_posterior_trace": self.trace,
        }

    def to_json(self, feature_names=None) -> str:
        return json.dumps(self.to_dict(feature_names))


def _check_state(mdp: TabularMdp, s0: int) -> int:
    if not 0 <= int(s0) < mdp.num_states:
        raise InvalidInput(f"state {s0} out of range")
    return int(s0)


def _check_prior(mdp: TabularMdp, config: RlspConfig) -> None:
    if config.prior.shape[0] != mdp.num_states:
        raise InvalidInput("prior over the first state does not match the MDP")


def log_likelihood_s0(mdp: TabularMdp, theta, config: RlspConfig, s0: int) -> float:
    """``ln p(s0 | theta)``; ``-inf`` when the evidence is impossible."""
    s0 = _check_state(mdp, s0)
    _check_prior(mdp, config)
    T = config.alice_horizon
    if T == 0:
        p = config.prior[s0]
    else:
        policy, _ = soft_value_iteration(mdp, theta, T)
        p = forward_marginals(mdp, policy, config.prior, T)[T, s0]
    if p <= 0:
        log.warning("p(s0=%d) = 0: observed state unreachable in exactly %d steps from the prior", s0, T)
        return -math.inf
    return math.log(p)


def grad_state(mdp: TabularMdp, policy: SoftPolicy, fe: FeatureExpectations, prior, horizon: int) -> GradState:
    """Forward pass for ``p(s_t)`` and ``G_t`` with ``G`` at the first step equal to zero."""
    probs = policy.probs
    S, F = mdp.num_states, mdp.num_features
    marg = forward_marginals(mdp, policy, prior, horizon)
    G = np.zeros((horizon + 1, S, F))
    for k in range(horizon):
        g = step_gradients(mdp, fe, k)  # (S, A, F)
        w = probs[k][:, :, None] * (marg[k][:, None, None] * g + G[k][:, None, :])
        G[k + 1] = mdp.push_forward(w)
    return GradState(marg, G)


def _reach_weighted_gradient(mdp: TabularMdp, policy: SoftPolicy, prior, horizon: int, s0: int):
    """``(p(s0), G_T(s0))`` without materializing the per-state G or F tables.

    Unrolling the G recursion gives
    ``G_T(s0) = sum_k sum_{s,a} p_k(s) pi_k(a|s) h_{k+1}(s,a) g_k(s,a)``
    where ``h_{k+1}(s,a)`` is the probability of reaching s0 at time T after
    taking a in s at time k. Each ``g_k`` is linear in the F tables, so an
    adjoint pass over ``F_t = f + M_t F_{t+1}`` folds them into one
    state-weight vector dotted with the features. Only scalar-per-state
    sweeps remain, instead of F-dimensional ones.
    """
    probs = policy.probs
    S, T = mdp.num_states, horizon
    marg = forward_marginals(mdp, policy, prior, T)
    h = np.zeros(S)
    h[s0] = 1.0
    reach = [None] * T  # reach[k][s, a] = P(s_T = s0 | s_k = s, a_k = a)
    for k in range(T - 1, -1, -1):
        reach[k] = mdp.expect_next(h)
        h = np.einsum("sa,sa->s", probs[k], reach[k])
    weights = np.zeros(S)  # total coefficient on f
    y = np.zeros(S)  # adjoint of F_t
    for t in range(T + 1):
        x = np.zeros(S)
        if t < T:
            w = marg[t][:, None] * probs[t] * reach[t]
            a_t = w @ np.ones(w.shape[1])
            weights += a_t
            x -= a_t
        if t > 0:
            x += b_prev
            y = mdp.push_forward(y[:, None] * probs[t - 1])
        y = y + x
        weights += y
        if t < T:
            b_prev = mdp.push_forward(w)
    return marg[T, s0], weights @ mdp.features


def likelihood_and_gradient(mdp: TabularMdp, theta, config: RlspConfig, s0: int) -> tuple[float, np.ndarray]:
    """``(ln p(s0|theta), grad)`` from one soft value iteration and three scalar sweeps."""
    s0 = _check_state(mdp, s0)
    _check_prior(mdp, config)
    T = config.alice_horizon
    if T == 0:
        p = config.prior[s0]
        if p <= 0:
            raise ImpossibleEvidence(f"state {s0} has zero prior mass and alice_horizon is 0")
        return math.log(p), np.zeros(mdp.num_features)
    policy, _ = soft_value_iteration(mdp, theta, T)
    p, numerator = _reach_weighted_gradient(mdp, policy, config.prior, T, s0)
    if p <= 0:
        raise ImpossibleEvidence(
            f"state {s0} cannot be reached in exactly {T} steps from the support of the prior"
        )
    return math.log(p), numerator / p


def likelihood_and_gradient_tables(mdp: TabularMdp, theta, config: RlspConfig, s0: int) -> tuple[float, np.ndarray]:
    """Reference path through the full F and G tables (``G_T(s0) / p(s0)``)."""
    s0 = _check_state(mdp, s0)
    _check_prior(mdp, config)
    T = config.alice_horizon
    if T == 0:
        return likelihood_and_gradient(mdp, theta, config, s0)
    policy, _ = soft_value_iteration(mdp, theta, T)
    fe = feature_expectations(mdp, policy, T)
    gs = grad_state(mdp, policy, fe, config.prior, T)
    p = gs.marginals[T, s0]
    if p <= 0:
        raise ImpossibleEvidence(
            f"state {s0} cannot be reached in exactly {T} steps from the support of the prior"
        )
    return math.log(p), gs.G[T, s0] / p


def rlsp_gradient(mdp: TabularMdp, theta, config: RlspConfig, s0: int) -> np.ndarray:
    return likelihood_and_gradient(mdp, theta, config, s0)[1]


def brute_force_log_likelihood(
    mdp: TabularMdp, theta, config: RlspConfig, s0: int, budget: int = 1_000_000
) -> float:
    """Sum of path probabilities over every state/action sequence ending in ``s0``.

    Test oracle: cost grows as (S*A)^T, refused beyond ``budget`` paths.
    """
    s0 = _check_state(mdp, s0)
    _check_prior(mdp, config)
    T = config.alice_horizon
    if T == 0:
        p = config.prior[s0]
        return math.log(p) if p > 0 else -math.inf
    S, A = mdp.num_states, mdp.num_actions
    n_paths = S * (S * A) ** T
    if n_paths > budget:
        raise InvalidInput(f"{n_paths} paths exceeds enumeration budget {budget}")
    policy, _ = soft_value_iteration(mdp, theta, T)
    pi = policy.probs
    succ = [[list(mdp.successors(s, a)) for a in range(A)] for s in range(S)]

    def paths(k: int, s: int, prob: float) -> float:
        # depth-first over feasible (action, successor) pairs; the final action marginalizes to 1
        if k == T:
            return prob if s == s0 else 0.0
        acc = 0.0
        for a in range(A):
            pa = prob * pi[k, s, a]
            if pa > 0:
                for nxt, p in succ[s][a]:
                    acc += paths(k + 1, nxt, pa * p)
        return acc

    total = sum(paths(0, int(start), float(config.prior[start])) for start in np.flatnonzero(config.prior > 0))
    return math.log(total) if total > 0 else -math.inf


def log_prior(theta: np.ndarray, mean: np.ndarray, std: float) -> float:
    d = theta.shape[0]
    return float(-0.5 * np.sum((theta - mean) ** 2) / std**2 - d * math.log(std * math.sqrt(2 * math.pi)))


def log_posterior_and_gradient(mdp, theta, config: RlspConfig, s0: int) -> tuple[float, np.ndarray]:
    theta = np.asarray(theta, dtype=np.float64)
    mean = config.prior_mean(mdp.num_features)
    ll, grad = likelihood_and_gradient(mdp, theta, config, s0)
    lp = ll + log_prior(theta, mean, config.theta_prior_std)
    return lp, grad - (theta - mean) / config.theta_prior_std**2


def rlsp_infer(mdp: TabularMdp, config: RlspConfig, s0: int) -> InferredReward:
    """MAP estimate by gradient ascent on log-likelihood plus Gaussian log-prior.

    Starts from the prior mean. A step that lowers the log posterior is
    rejected and the step size halved. Stops when the gradient sup-norm
    drops below ``convergence_tol`` or after ``max_iterations`` evaluations.
    """
    theta = config.prior_mean(mdp.num_features).copy()
    lp, grad = log_posterior_and_gradient(mdp, theta, config, s0)
    step = config.step_size
    trace = [lp]
    converged = False
    iterations = 0
    while iterations < config.max_iterations:
        if np.max(np.abs(grad)) < config.convergence_tol:
            converged = True
            break
        iterations += 1
        candidate = theta + step * grad
        lp_new, grad_new = log_posterior_and_gradient(mdp, candidate, config, s0)
        if lp_new >= lp:
            theta, lp, grad = candidate, lp_new, grad_new
            trace.append(lp)
        else:
            step /= 2
    if not converged and np.max(np.abs(grad)) < config.convergence_tol:
        converged = True
    log.debug("rlsp_infer: %d iterations, log posterior %.6g, converged=%s", iterations, lp, converged)
    return InferredReward(RewardParams(theta), lp, iterations, converged, trace)
