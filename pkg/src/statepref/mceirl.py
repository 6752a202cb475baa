"""Exact feature-expectation recursion and per-trajectory MCE IRL gradient."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .mdp import InvalidInput, TabularMdp, Trajectory, soft_value_iteration, trajectory_log_prob


@dataclass(frozen=True, eq=False)
class FeatureExpectations:
    """``table[t, s]``: expected feature sum from ``s`` at time t to the horizon."""

    table: np.ndarray  # (H+1, S, F)

    @property
    def horizon(self) -> int:
        return self.table.shape[0] - 1

    def to_json(self) -> str:
        return json.dumps({"horizon": self.horizon, "table": self.table.tolist()})


def feature_expectations(mdp: TabularMdp, policy, horizon: int | None = None) -> FeatureExpectations:
    """Backward recursion ``F_t(s) = f(s) + sum_a pi_t(a|s) sum_s' T(s'|s,a) F_{t+1}(s')``
    with base case ``F_H = f``."""
    H = policy.horizon if horizon is None else horizon
    if policy.horizon < H:
        raise InvalidInput("policy does not cover the requested horizon")
    probs = policy.probs
    f = mdp.features
    table = np.empty((H + 1,) + f.shape)
    table[H] = f
    for t in range(H - 1, -1, -1):
        nxt = mdp.expect_next(table[t + 1])  # (S, A, F)
        table[t] = f + np.einsum("sa,saf->sf", probs[t], nxt)
    return FeatureExpectations(table)


def step_gradients(mdp: TabularMdp, fe: FeatureExpectations, t: int) -> np.ndarray:
    """``g_t(s, a) = f(s) + E_{s'|s,a} F_{t+1}(s') - F_t(s)`` for every (s, a); shape (S, A, F)."""
    return mdp.features[:, None, :] + mdp.expect_next(fe.table[t + 1]) - fe.table[t][:, None, :]


def trajectory_gradient(mdp: TabularMdp, theta, tau: Trajectory) -> np.ndarray:
    """Exact ``grad_theta ln p(tau | theta)`` for a temperature-1 soft-optimal expert.

    The last step contributes nothing, so the result does not depend on the
    final action.
    """
    if not tau.is_feasible(mdp):
        raise InvalidInput("trajectory contains an infeasible transition")
    H = tau.horizon
    policy, _ = soft_value_iteration(mdp, theta, H)
    fe = feature_expectations(mdp, policy, H)
    f = mdp.features
    grad = np.zeros(mdp.num_features)
    for t in range(H):
        s, a = tau.states[t], tau.actions[t]
        row = s * mdp.num_actions + a
        lo, hi = mdp.kernel.indptr[row], mdp.kernel.indptr[row + 1]
        expected_next = mdp.kernel.data[lo:hi] @ fe.table[t + 1][mdp.kernel.indices[lo:hi]]
        grad += f[s] + expected_next - fe.table[t][s]
    return grad


def deterministic_reduction(mdp: TabularMdp, theta, tau: Trajectory) -> np.ndarray:
    """``sum_t f(s_t) - F_0(s_0)``: the gradient's closed form when dynamics are deterministic."""
    if not mdp.is_deterministic:
        raise InvalidInput("the reduction only holds for deterministic dynamics")
    policy, _ = soft_value_iteration(mdp, theta, tau.horizon)
    fe = feature_expectations(mdp, policy, tau.horizon)
    return mdp.features[list(tau.states)].sum(axis=0) - fe.table[0][tau.states[0]]


def gradients_agree(a, b, atol: float = 1e-10) -> bool:
    return bool(np.max(np.abs(np.asarray(a) - np.asarray(b)), initial=0.0) <= atol)


def deterministic_reduction_check(mdp: TabularMdp, theta, tau: Trajectory, atol: float = 1e-10) -> bool:
    return gradients_agree(trajectory_gradient(mdp, theta, tau), deterministic_reduction(mdp, theta, tau), atol)


def demonstrations_log_likelihood(mdp: TabularMdp, theta, demos, initial) -> float:
    """``sum_i ln p(tau_i | theta)`` over demonstrations sharing one horizon."""
    horizons = {tau.horizon for tau in demos}
    if len(horizons) != 1:
        raise InvalidInput("demonstrations must share a horizon")
    policy, _ = soft_value_iteration(mdp, theta, horizons.pop())
    return sum(trajectory_log_prob(mdp, policy, tau, initial) for tau in demos)


def demonstrations_gradient(mdp: TabularMdp, theta, demos) -> np.ndarray:
    return sum((trajectory_gradient(mdp, theta, tau) for tau in demos), np.zeros(mdp.num_features))
