"""Comparison planners: specified reward only, feature-deviation penalty and
relative reachability against a do-nothing baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gridworlds import ScenarioBundle
from .mdp import DeterministicPolicy, InvalidInput, TabularMdp, hard_value_iteration

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.int64)


class StochasticBaseline(InvalidInput):
    """The no-op rollout from s0 is not deterministic, so the baseline state is undefined."""


def plan_spec(scenario: ScenarioBundle) -> DeterministicPolicy:
    r = scenario.mdp.features @ scenario.theta_spec.theta
    return hard_value_iteration(scenario.mdp, r, scenario.robot_horizon)[0]


def deviation_reward(scenario: ScenarioBundle, lam: float) -> np.ndarray:
    f = scenario.mdp.features
    return f @ scenario.theta_spec.theta - lam * np.abs(f - f[scenario.s0]).sum(axis=1)


def plan_deviation(scenario: ScenarioBundle, lam: float) -> DeterministicPolicy:
    if lam < 0:
        raise InvalidInput("lambda must be non-negative")
    return hard_value_iteration(scenario.mdp, deviation_reward(scenario, lam), scenario.robot_horizon)[0]


def _successor_lists(mdp: TabularMdp) -> list[np.ndarray]:
    """Positive-probability successors of each state, over all actions."""
    A = mdp.num_actions
    indptr, indices = mdp.kernel.indptr, mdp.kernel.indices
    return [np.unique(indices[indptr[s * A] : indptr[(s + 1) * A]]) for s in range(mdp.num_states)]


def reachable_within(mdp: TabularMdp, sources, steps: int | None) -> np.ndarray:
    """Sorted indices of states reachable from ``sources`` within ``steps`` (None = unbounded)."""
    A = mdp.num_actions
    indptr, indices = mdp.kernel.indptr, mdp.kernel.indices
    seen = np.zeros(mdp.num_states, dtype=bool)
    frontier = np.unique(np.asarray(sources, dtype=np.int64))
    seen[frontier] = True
    k = 0
    while frontier.size and (steps is None or k < steps):
        rows = (frontier[:, None] * A + np.arange(A)).ravel()
        nxt = np.concatenate([indices[indptr[r] : indptr[r + 1]] for r in rows])
        nxt = np.unique(nxt)
        frontier = nxt[~seen[nxt]]
        seen[frontier] = True
        k += 1
    return np.flatnonzero(seen)


@dataclass(frozen=True, eq=False)
class ReachabilityCache:
    """Bit-packed ``reach[s][z]``: z reachable from s within ``horizon_cap`` steps.

    Rows and columns cover ``states`` (a set closed under transitions), which
    is the whole MDP unless the cache was built from explicit sources.
    """

    states: np.ndarray
    bits: np.ndarray  # (n, ceil(n / 8)) uint8
    horizon_cap: int
    total_states: int

    def _local(self, s: int) -> int:
        i = int(np.searchsorted(self.states, s))
        if i >= self.states.size or self.states[i] != s:
            raise KeyError(f"state {s} not covered by this cache")
        return i

    def row(self, s: int) -> np.ndarray:
        n = self.states.size
        return np.unpackbits(self.bits[self._local(s)], count=n).astype(bool)

    def reachable(self, s: int, z: int) -> bool:
        return bool(self.row(s)[self._local(z)])

    @property
    def reach(self) -> np.ndarray:
        """Dense boolean matrix over the covered states (small MDPs only)."""
        n = self.states.size
        return np.unpackbits(self.bits, axis=1, count=n).astype(bool)

    def deficit(self, states, baseline: int) -> np.ndarray:
        """``d(s, b) = |reach(b) minus reach(s)| / |S|`` for each s in ``states``."""
        idx = np.searchsorted(self.states, np.asarray(states, dtype=np.int64))
        rb = self.bits[self._local(baseline)]
        lost = rb[None, :] & ~self.bits[idx]
        return _POPCOUNT[lost].sum(axis=1) / self.total_states


def reachability_coverage(mdp: TabularMdp, horizon_cap: int, sources=None) -> ReachabilityCache:
    """Positive-probability reachability within ``horizon_cap`` steps.

    With ``sources`` given, only the closure of those states is covered.
    """
    if sources is None:
        states = np.arange(mdp.num_states)
    else:
        states = reachable_within(mdp, sources, None)
    n = states.size
    local = np.full(mdp.num_states, -1, dtype=np.int64)
    local[states] = np.arange(n)
    succ = _successor_lists(mdp)
    width = max(len(succ[s]) for s in states)
    table = np.empty((n, width), dtype=np.int64)
    for i, s in enumerate(states):
        nxt = local[succ[s]]
        table[i, : nxt.size] = nxt
        table[i, nxt.size :] = i
    nbytes = (n + 7) // 8
    bits = np.zeros((n, nbytes), dtype=np.uint8)
    ar = np.arange(n)
    bits[ar, ar >> 3] = (128 >> (ar & 7)).astype(np.uint8)
    for _ in range(horizon_cap):
        new = bits.copy()
        for j in range(width):
            new |= bits[table[:, j]]
        if np.array_equal(new, bits):
            break
        bits = new
    return ReachabilityCache(states, bits, horizon_cap, mdp.num_states)


def noop_rollout(scenario: ScenarioBundle) -> list[int]:
    """States of the do-nothing baseline from s0, t = 0..robot_horizon."""
    mdp = scenario.mdp
    noop = scenario.env.action_names.index("NOOP")
    s = scenario.s0
    out = [s]
    for _ in range(scenario.robot_horizon):
        nxt = mdp.successors(s, noop)
        if len(nxt) != 1:
            raise StochasticBaseline(f"no-op from state {s} has {len(nxt)} possible outcomes")
        s = nxt[0][0]
        out.append(s)
    return out


def reachability_reward(scenario: ScenarioBundle, lam: float, cache: ReachabilityCache | None = None) -> np.ndarray:
    """Time-indexed reward ``theta_spec . f(s) - lam * d(s, b_t)``, shape (H+1, S).

    The penalty is only evaluated on states reachable from s0 within the
    robot horizon; no other state can influence the plan from s0.
    """
    if lam < 0:
        raise InvalidInput("lambda must be non-negative")
    mdp, H = scenario.mdp, scenario.robot_horizon
    baseline = noop_rollout(scenario)
    base_r = mdp.features @ scenario.theta_spec.theta
    reward = np.tile(base_r, (H + 1, 1))
    if lam == 0:
        return reward
    if cache is None:
        cache = reachability_cache_for(scenario)
    live = reachable_within(mdp, [scenario.s0], H)
    penalties: dict[int, np.ndarray] = {}
    for t, b in enumerate(baseline):
        if b not in penalties:
            penalties[b] = cache.deficit(live, b)
        reward[t, live] -= lam * penalties[b]
    return reward


def reachability_cache_for(scenario: ScenarioBundle) -> ReachabilityCache:
    cap = scenario.robot_horizon + scenario.alice_horizon
    return reachability_coverage(scenario.mdp, cap, sources=[scenario.s0])


def plan_reachability(
    scenario: ScenarioBundle, lam: float, cache: ReachabilityCache | None = None
) -> DeterministicPolicy:
    reward = reachability_reward(scenario, lam, cache)
    return hard_value_iteration(scenario.mdp, reward, scenario.robot_horizon)[0]
