"""Inferring preferences from the state of the world with tabular RLSP."""

from .mdp import InvalidInput, RewardParams, TabularMdp
from .rlsp import ImpossibleEvidence, RlspConfig, rlsp_infer

__all__ = ["ImpossibleEvidence", "InvalidInput", "RewardParams", "RlspConfig", "TabularMdp", "rlsp_infer"]
