"""Combining the inferred reward with the specified one."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .mdp import InvalidInput, RewardParams, TabularMdp
from .rlsp import RlspConfig, rlsp_infer


class CombineKind(Enum):
    ADDITIVE = "additive"
    BAYESIAN = "bayesian"


@dataclass(frozen=True)
class CombineMethod:
    """ADDITIVE: ``theta_alice + lam * theta_spec`` with a zero-centred prior of std ``sigma``.
    BAYESIAN: prior centred on ``theta_spec`` with std ``sigma``; the MAP is used as is."""

    kind: CombineKind
    lam: float = 1.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidInput("sigma must be positive")


def _vec(theta) -> np.ndarray:
    return theta.theta if isinstance(theta, RewardParams) else np.asarray(theta, dtype=np.float64)


def combine_additive(theta_alice, theta_spec, lam: float) -> RewardParams:
    a, s = _vec(theta_alice), _vec(theta_spec)
    if a.shape != s.shape:
        raise InvalidInput(f"dimension mismatch: {a.shape} vs {s.shape}")
    return RewardParams(a + lam * s)


def infer_with_spec_prior(mdp: TabularMdp, config: RlspConfig, s0: int, theta_spec, sigma: float) -> RewardParams:
    if not sigma > 0:
        raise InvalidInput("sigma must be positive")
    return rlsp_infer(mdp, config.with_prior(_vec(theta_spec), sigma), s0).theta_alice


def final_reward(method: CombineMethod, mdp: TabularMdp, config: RlspConfig, s0: int, theta_spec) -> RewardParams:
    if method.kind is CombineKind.BAYESIAN:
        return infer_with_spec_prior(mdp, config, s0, theta_spec, method.sigma)
    zero = np.zeros(mdp.num_features)
    alice = rlsp_infer(mdp, config.with_prior(zero, method.sigma), s0).theta_alice
    return combine_additive(alice, theta_spec, method.lam)
