"""Metropolis-Hastings sampling from the single-state reward posterior."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .mdp import InvalidInput, RewardParams, TabularMdp, ValueTable, forward_marginals, soft_value_iteration
from .rlsp import ImpossibleEvidence, RlspConfig, log_prior

MAX_INITIAL_DRAWS = 100


@dataclass(frozen=True)
class SamplerConfig:
    proposal_std: float = 0.2
    num_samples: int = 20_000
    burn_in: int = 2_000
    seed: int = 0
    warm_start: bool = True

    def __post_init__(self):
        if not self.proposal_std > 0:
            raise InvalidInput("proposal_std must be positive")
        if self.num_samples <= 0:
            raise InvalidInput("num_samples must be positive")
        if self.burn_in < 0:
            raise InvalidInput("burn_in must be non-negative")


@dataclass(frozen=True, eq=False)
class PosteriorSamples:
    """Post-burn-in chain; ``accepted[i]`` records whether step i moved."""

    samples: np.ndarray  # (num_samples, F)
    accepted: np.ndarray  # (num_samples,) bool

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean()) if self.accepted.size else 0.0

    def __len__(self):
        return self.samples.shape[0]

    def to_csv(self, path, feature_names=None) -> None:
        F = self.samples.shape[1]
        names = list(feature_names) if feature_names is not None else [f"theta_{i}" for i in range(F)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "accepted", *names])
            for i, (row, acc) in enumerate(zip(self.samples, self.accepted)):
                w.writerow([i, int(acc), *(repr(float(x)) for x in row)])


class _Likelihood:
    """``ln p(s0 | theta)`` reusing one set of value-iteration buffers across calls."""

    def __init__(self, mdp: TabularMdp, config: RlspConfig, s0: int, warm_start: bool):
        self.mdp, self.config, self.s0 = mdp, config, s0
        self.warm_start = warm_start
        self.buffers: ValueTable | None = None

    def __call__(self, theta: np.ndarray) -> float:
        T = self.config.alice_horizon
        if T == 0:
            p = self.config.prior[self.s0]
            return math.log(p) if p > 0 else -math.inf
        out = self.buffers if self.warm_start else None
        policy, values = soft_value_iteration(self.mdp, theta, T, out=out)
        if self.warm_start:
            self.buffers = values
        p = forward_marginals(self.mdp, policy, self.config.prior, T)[T, self.s0]
        return math.log(p) if p > 0 else -math.inf


def mcmc_sample(mdp: TabularMdp, config: RlspConfig, s0: int, sampler: SamplerConfig) -> PosteriorSamples:
    """Random-walk MH with isotropic Gaussian proposals on ``p(s0|theta) p(theta)``.

    The chain starts from a draw of the Gaussian prior (redrawn while the
    likelihood is zero). Acceptance is decided in log space.
    """
    if not 0 <= int(s0) < mdp.num_states:
        raise InvalidInput(f"state {s0} out of range")
    if config.prior.shape[0] != mdp.num_states:
        raise InvalidInput("prior over the first state does not match the MDP")
    rng = np.random.default_rng(sampler.seed)
    F = mdp.num_features
    mean, std = config.prior_mean(F), config.theta_prior_std
    loglik = _Likelihood(mdp, config, int(s0), sampler.warm_start)

    for _ in range(MAX_INITIAL_DRAWS):
        theta = mean + std * rng.standard_normal(F)
        ll = loglik(theta)
        if ll > -math.inf:
            break
    else:
        raise ImpossibleEvidence(f"p(s0={s0}) is zero at {MAX_INITIAL_DRAWS} prior draws")
    lp = ll + log_prior(theta, mean, std)

    total = sampler.burn_in + sampler.num_samples
    samples = np.empty((sampler.num_samples, F))
    accepted = np.zeros(sampler.num_samples, dtype=bool)
    for i in range(total):
        candidate = theta + sampler.proposal_std * rng.standard_normal(F)
        u = rng.random()
        ll_c = loglik(candidate)
        moved = False
        if ll_c > -math.inf:
            lp_c = ll_c + log_prior(candidate, mean, std)
            if u == 0.0 or math.log(u) < lp_c - lp:
                theta, lp = candidate, lp_c
                moved = True
        j = i - sampler.burn_in
        if j >= 0:
            samples[j] = theta
            accepted[j] = moved
    return PosteriorSamples(samples, accepted)


def posterior_mean(samples: PosteriorSamples) -> RewardParams:
    if len(samples) == 0:
        raise InvalidInput("no samples to average")
    return RewardParams(samples.samples.mean(axis=0))
