"""Finite-horizon tabular MDPs, soft/hard value iteration and trajectory tools.

Transitions are stored as a single sparse matrix with one row per
(state, action) pair, row index ``s * num_actions + a``. Every dynamic
program in the package goes through :meth:`TabularMdp.expect_next` (pull
values back through the dynamics) or :meth:`TabularMdp.push_forward` (push
mass forward), so dense and sparse problems share one code path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

PROB_ATOL = 1e-12


class InvalidInput(ValueError):
    """Raised when an argument violates a documented precondition."""


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Enumerated states and actions, transition kernel and state features."""

    num_states: int
    num_actions: int
    kernel: sp.csr_matrix  # (S*A, S)
    features: np.ndarray  # (S, F)
    state_names: tuple[str, ...] | None = None
    _kernel_t: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        S, A = self.num_states, self.num_actions
        if S <= 0 or A <= 0:
            raise InvalidInput("need at least one state and one action")
        kernel = sp.csr_matrix(self.kernel, dtype=np.float64)
        if kernel.shape != (S * A, S):
            raise InvalidInput(f"kernel shape {kernel.shape} != {(S * A, S)}")
        kernel.eliminate_zeros()
        kernel.sort_indices()
        if kernel.nnz and kernel.data.min() < 0:
            raise InvalidInput("negative transition probability")
        rows = np.asarray(kernel.sum(axis=1)).ravel()
        bad = np.flatnonzero(np.abs(rows - 1.0) > PROB_ATOL)
        if bad.size:
            s, a = divmod(int(bad[0]), A)
            raise InvalidInput(f"T[{s}][{a}] sums to {rows[bad[0]]!r}, not 1")
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != S:
            raise InvalidInput(f"features must have shape ({S}, F), got {feats.shape}")
        if not np.all(np.isfinite(feats)):
            raise InvalidInput("features must be finite")
        feats.setflags(write=False)
        if self.state_names is not None and len(self.state_names) != S:
            raise InvalidInput("state_names length does not match num_states")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "_kernel_t", kernel.T.tocsr())

    # -- construction -----------------------------------------------------

    @classmethod
    def from_dense(cls, transitions, features, state_names=None) -> "TabularMdp":
        """Build from a dense ``T[s][a][s']`` tensor."""
        T = np.asarray(transitions, dtype=np.float64)
        if T.ndim != 3 or T.shape[0] != T.shape[2]:
            raise InvalidInput(f"transitions must have shape (S, A, S), got {T.shape}")
        S, A, _ = T.shape
        names = tuple(state_names) if state_names is not None else None
        return cls(S, A, sp.csr_matrix(T.reshape(S * A, S)), features, names)

    @classmethod
    def from_successors(cls, successors, features, state_names=None) -> "TabularMdp":
        """Build a deterministic MDP from a ``(S, A)`` table of next states."""
        nxt = np.asarray(successors, dtype=np.int64)
        S, A = nxt.shape
        kernel = sp.csr_matrix(
            (np.ones(S * A), (np.arange(S * A), nxt.ravel())), shape=(S * A, S)
        )
        names = tuple(state_names) if state_names is not None else None
        return cls(S, A, kernel, features, names)

    # -- basic properties ------------------------------------------------

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all(np.diff(self.kernel.indptr) == 1))

    def dense_transitions(self) -> np.ndarray:
        return self.kernel.toarray().reshape(self.num_states, self.num_actions, self.num_states)

    def transition_prob(self, s: int, a: int, s_next: int) -> float:
        return float(self.kernel[s * self.num_actions + a, s_next])

    def successors(self, s: int, a: int) -> list[tuple[int, float]]:
        row = s * self.num_actions + a
        lo, hi = self.kernel.indptr[row], self.kernel.indptr[row + 1]
        return list(zip(self.kernel.indices[lo:hi].tolist(), self.kernel.data[lo:hi].tolist()))

    def next_state_table(self) -> np.ndarray:
        """``(S, A)`` successor table; only valid for deterministic MDPs."""
        if not self.is_deterministic:
            raise InvalidInput("next_state_table requires a deterministic MDP")
        return self.kernel.indices.reshape(self.num_states, self.num_actions).copy()

    # -- the two primitive sweeps ------------------------------------------

    def expect_next(self, values: np.ndarray) -> np.ndarray:
        """``out[s, a, ...] = sum_s' T(s'|s,a) values[s', ...]``."""
        values = np.asarray(values, dtype=np.float64)
        tail = values.shape[1:]
        out = self.kernel @ values.reshape(self.num_states, -1)
        return np.asarray(out).reshape((self.num_states, self.num_actions) + tail)

    def push_forward(self, weights: np.ndarray) -> np.ndarray:
        """``out[s', ...] = sum_{s,a} weights[s, a, ...] T(s'|s,a)``."""
        weights = np.asarray(weights, dtype=np.float64)
        tail = weights.shape[2:]
        out = self._kernel_t @ weights.reshape(self.num_states * self.num_actions, -1)
        return np.asarray(out).reshape((self.num_states,) + tail)

    # -- serialization ------------------------------------------------------

    def to_dict(self, dense: bool | None = None) -> dict:
        """JSON-ready document. Large MDPs default to the sparse row format."""
        if dense is None:
            dense = self.num_states * self.num_states * self.num_actions <= 1_000_000
        doc = {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "features": self.features.tolist(),
            "state_names": list(self.state_names) if self.state_names is not None else None,
        }
        if dense:
            doc["transitions"] = self.dense_transitions().tolist()
        else:
            doc["transition_format"] = "sparse"
            doc["transitions"] = [
                [[[nxt, p] for nxt, p in self.successors(s, a)] for a in range(self.num_actions)]
                for s in range(self.num_states)
            ]
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TabularMdp":
        S, A = int(doc["num_states"]), int(doc["num_actions"])
        names = doc.get("state_names")
        if doc.get("transition_format", "dense") == "sparse":
            rows, cols, vals = [], [], []
            for s, per_action in enumerate(doc["transitions"]):
                for a, pairs in enumerate(per_action):
                    for nxt, p in pairs:
                        rows.append(s * A + a)
                        cols.append(int(nxt))
                        vals.append(float(p))
            kernel = sp.csr_matrix((vals, (rows, cols)), shape=(S * A, S))
            return cls(S, A, kernel, doc["features"], tuple(names) if names else None)
        T = np.asarray(doc["transitions"], dtype=np.float64)
        if T.shape != (S, A, S):
            raise InvalidInput(f"transitions shape {T.shape} != {(S, A, S)}")
        return cls.from_dense(T, doc["features"], names)

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(**kwargs))

    @classmethod
    def from_json(cls, text: str) -> "TabularMdp":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class RewardParams:
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(theta)):
            raise InvalidInput("reward parameters must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def __len__(self):
        return self.theta.shape[0]

    def state_rewards(self, mdp: TabularMdp) -> np.ndarray:
        return mdp.features @ self.theta


@dataclass(frozen=True, eq=False)
class SoftPolicy:
    """Nonstationary stochastic policy ``probs[t, s, a]`` for t = 0..horizon."""

    probs: np.ndarray
    temperature: float = 1.0

    @property
    def horizon(self) -> int:
        return self.probs.shape[0] - 1


@dataclass(frozen=True, eq=False)
class DeterministicPolicy:
    """Nonstationary deterministic policy ``actions[t, s]``."""

    actions: np.ndarray
    num_actions: int

    @property
    def horizon(self) -> int:
        return self.actions.shape[0] - 1

    @property
    def probs(self) -> np.ndarray:
        H1, S = self.actions.shape
        out = np.zeros((H1, S, self.num_actions))
        np.put_along_axis(out, self.actions[..., None], 1.0, axis=2)
        return out


@dataclass(frozen=True, eq=False)
class ValueTable:
    q: np.ndarray  # (H+1, S, A)
    v: np.ndarray  # (H+1, S)


@dataclass(frozen=True)
class Trajectory:
    states: tuple[int, ...]
    actions: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        object.__setattr__(self, "actions", tuple(int(a) for a in self.actions))
        if len(self.states) != len(self.actions) or not self.states:
            raise InvalidInput("a trajectory needs H+1 states and H+1 actions")

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    def is_feasible(self, mdp: TabularMdp) -> bool:
        return all(
            mdp.transition_prob(s, a, s2) > 0
            for s, a, s2 in zip(self.states, self.actions, self.states[1:])
        )


def state_distribution(probs, num_states: int | None = None) -> np.ndarray:
    """Validate (and copy) a distribution over states."""
    p = np.array(probs, dtype=np.float64).reshape(-1)
    if num_states is not None and p.shape[0] != num_states:
        raise InvalidInput(f"distribution has {p.shape[0]} entries, expected {num_states}")
    if p.min() < 0 or abs(p.sum() - 1.0) > PROB_ATOL:
        raise InvalidInput("state distribution must be non-negative and sum to 1")
    return p


def delta(num_states: int, s: int) -> np.ndarray:
    p = np.zeros(num_states)
    p[s] = 1.0
    return p


def uniform(num_states: int) -> np.ndarray:
    return np.full(num_states, 1.0 / num_states)


def _theta_vector(theta) -> np.ndarray:
    if isinstance(theta, RewardParams):
        return theta.theta
    return RewardParams(theta).theta


def soft_value_iteration(
    mdp: TabularMdp,
    theta,
    horizon: int,
    temperature: float = 1.0,
    out: ValueTable | None = None,
) -> tuple[SoftPolicy, ValueTable]:
    """Finite-horizon soft Bellman backups with ``V_{horizon+1} = 0``.

    ``V_t(s) = temperature * logsumexp(Q_t(s, .) / temperature)`` and the
    policy is ``exp((Q - V) / temperature)``. ``out`` lets a caller recycle
    the Q/V buffers of a previous call with the same shape.
    """
    if horizon < 0:
        raise InvalidInput("horizon must be >= 0")
    if not temperature > 0:
        raise InvalidInput("temperature must be positive")
    r = mdp.features @ _theta_vector(theta)
    S, A = mdp.num_states, mdp.num_actions
    if out is not None and out.q.shape == (horizon + 1, S, A):
        Q, V = out.q, out.v
    else:
        Q = np.empty((horizon + 1, S, A))
        V = np.empty((horizon + 1, S))
    probs = np.empty((horizon + 1, S, A))
    nxt = np.zeros(S)
    ones = np.ones(A)
    for t in range(horizon, -1, -1):
        Q[t] = r[:, None] + mdp.expect_next(nxt)
        scaled = Q[t] / temperature
        m = scaled.max(axis=1)
        z = np.exp(scaled - m[:, None])
        tot = z @ ones
        V[t] = temperature * (m + np.log(tot))
        probs[t] = z / tot[:, None]
        nxt = V[t]
    return SoftPolicy(probs, temperature), ValueTable(Q, V)


def hard_value_iteration(
    mdp: TabularMdp, reward, horizon: int, tie_tol: float = 1e-9
) -> tuple[DeterministicPolicy, np.ndarray]:
    """Optimal nonstationary policy for a state reward.

    ``reward`` is either ``(S,)`` or time-indexed ``(horizon+1, S)``.
    Actions whose Q is within ``tie_tol`` of the best count as tied and the
    lowest index wins.
    """
    if horizon < 0:
        raise InvalidInput("horizon must be >= 0")
    reward = np.asarray(reward, dtype=np.float64)
    S = mdp.num_states
    if reward.shape == (S,):
        reward = np.broadcast_to(reward, (horizon + 1, S))
    elif reward.shape != (horizon + 1, S):
        raise InvalidInput(f"reward shape {reward.shape} incompatible with S={S}, H={horizon}")
    actions = np.empty((horizon + 1, S), dtype=np.int64)
    V = np.empty((horizon + 1, S))
    nxt = np.zeros(S)
    for t in range(horizon, -1, -1):
        q = reward[t][:, None] + mdp.expect_next(nxt)
        best = q.max(axis=1)
        actions[t] = np.argmax(q >= best[:, None] - tie_tol, axis=1)
        V[t] = best
        nxt = best
    return DeterministicPolicy(actions, mdp.num_actions), V


def forward_marginals(mdp: TabularMdp, policy, initial, horizon: int) -> np.ndarray:
    """State marginals ``p(s_t)`` for t = 0..horizon, shape ``(horizon+1, S)``."""
    probs = policy.probs
    if probs.shape[1:] != (mdp.num_states, mdp.num_actions):
        raise InvalidInput("policy does not match the MDP's state/action sizes")
    if policy.horizon < horizon:
        raise InvalidInput(f"policy covers {policy.horizon} steps, {horizon} requested")
    p = state_distribution(initial, mdp.num_states)
    out = np.empty((horizon + 1, mdp.num_states))
    out[0] = p
    for t in range(horizon):
        p = mdp.push_forward(p[:, None] * probs[t])
        out[t + 1] = p
    return out


def trajectory_log_prob(mdp: TabularMdp, policy, tau: Trajectory, initial) -> float:
    """``ln p(tau)`` including the final action term; ``-inf`` if infeasible."""
    probs = policy.probs
    if policy.horizon < tau.horizon:
        raise InvalidInput("policy horizon shorter than trajectory")
    p0 = state_distribution(initial, mdp.num_states)[tau.states[0]]
    total = math.log(p0) if p0 > 0 else -math.inf
    for t, (s, a) in enumerate(zip(tau.states, tau.actions)):
        pa = probs[t, s, a]
        total += math.log(pa) if pa > 0 else -math.inf
        if t < tau.horizon:
            pt = mdp.transition_prob(s, a, tau.states[t + 1])
            total += math.log(pt) if pt > 0 else -math.inf
    return total


def _sample_next(mdp: TabularMdp, rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized inverse-CDF draw of next states for kernel rows."""
    indptr, indices, data = mdp.kernel.indptr, mdp.kernel.indices, mdp.kernel.data
    out = np.empty(rows.shape[0], dtype=np.int64)
    for i, (row, ui) in enumerate(zip(rows, u)):
        lo, hi = indptr[row], indptr[row + 1]
        k = np.searchsorted(np.cumsum(data[lo:hi]), ui, side="right")
        out[i] = indices[lo + min(k, hi - lo - 1)]
    return out


def sample_trajectories(
    mdp: TabularMdp, policy, initial, horizon: int, num: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """``num`` independent rollouts as ``(states, actions)`` arrays of shape (num, horizon+1)."""
    rng = np.random.default_rng(seed)
    probs = policy.probs
    p0 = state_distribution(initial, mdp.num_states)
    states = np.empty((num, horizon + 1), dtype=np.int64)
    actions = np.empty((num, horizon + 1), dtype=np.int64)
    s = rng.choice(mdp.num_states, size=num, p=p0)
    for t in range(horizon + 1):
        states[:, t] = s
        cdf = np.cumsum(probs[t, s], axis=1)
        a = (rng.random(num)[:, None] > cdf).sum(axis=1)
        a = np.minimum(a, mdp.num_actions - 1)
        actions[:, t] = a
        if t < horizon:
            s = _sample_next(mdp, s * mdp.num_actions + a, rng.random(num))
    return states, actions


def sample_trajectory(mdp: TabularMdp, policy, initial, horizon: int, seed: int) -> Trajectory:
    states, actions = sample_trajectories(mdp, policy, initial, horizon, 1, seed)
    return Trajectory(states[0], actions[0])


def enumerate_trajectories(mdp: TabularMdp, initial, horizon: int, limit: int = 1_000_000):
    """Yield every feasible trajectory from the support of ``initial``."""
    p0 = state_distribution(initial, mdp.num_states)
    starts = [int(s) for s in np.flatnonzero(p0 > 0)]
    count = 0

    def extend(states, actions):
        nonlocal count
        s = states[-1]
        for a in range(mdp.num_actions):
            if len(states) == horizon + 1:
                count += 1
                if count > limit:
                    raise InvalidInput(f"more than {limit} trajectories")
                yield Trajectory(states, actions + [a])
                continue
            for s2, _ in mdp.successors(s, a):
                yield from extend(states + [s2], actions + [a])

    for s in starts:
        yield from extend([s], [])


def random_mdp(
    rng: np.random.Generator,
    num_states: int,
    num_actions: int,
    num_features: int,
    deterministic: bool = False,
    sparsity: float = 0.5,
) -> TabularMdp:
    """Random MDP for property tests; each (s, a) has at least one successor."""
    S, A = num_states, num_actions
    if deterministic:
        return TabularMdp.from_successors(
            rng.integers(0, S, size=(S, A)), rng.normal(size=(S, num_features))
        )
    T = rng.random((S, A, S)) * (rng.random((S, A, S)) > sparsity)
    T[np.arange(S)[:, None], np.arange(A)[None, :], rng.integers(0, S, size=(S, A))] += 0.5
    T /= T.sum(axis=2, keepdims=True)
    return TabularMdp.from_dense(T, rng.normal(size=(S, num_features)))


def chain3() -> TabularMdp:
    """Three states, actions (STAY, RIGHT), RIGHT saturating at the end; one-hot features."""
    return TabularMdp.from_successors(
        [[0, 1], [1, 2], [2, 2]], np.eye(3), state_names=("s0", "s1", "s2")
    )


def check_policy_normalized(policy: SoftPolicy, atol: float = PROB_ATOL) -> bool:
    p = policy.probs
    return bool(np.all(p >= 0) and np.all(p <= 1) and np.allclose(p.sum(axis=2), 1.0, rtol=0, atol=atol))


__all__: Sequence[str] = [
    "InvalidInput",
    "TabularMdp",
    "RewardParams",
    "SoftPolicy",
    "DeterministicPolicy",
    "ValueTable",
    "Trajectory",
    "state_distribution",
    "delta",
    "uniform",
    "soft_value_iteration",
    "hard_value_iteration",
    "forward_marginals",
    "trajectory_log_prob",
    "sample_trajectory",
    "sample_trajectories",
    "enumerate_trajectories",
    "random_mdp",
    "chain3",
    "check_policy_normalized",
]
