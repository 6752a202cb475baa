"""Scenario execution, the true-reward-fraction metric and the experiment sweeps."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .baselines import StochasticBaseline, plan_deviation, plan_reachability, plan_spec, reachability_cache_for
from .combine import combine_additive
from .gridworlds import ScenarioBundle, get_scenario
from .mdp import (
    DeterministicPolicy,
    InvalidInput,
    RewardParams,
    delta,
    forward_marginals,
    hard_value_iteration,
    sample_trajectory,
    soft_value_iteration,
)
from .rlsp import ImpossibleEvidence, InferredReward, RlspConfig, rlsp_infer
from .sampler import SamplerConfig, mcmc_sample, posterior_mean

SCHEMA_VERSION = 1

LAMBDA_GRID = (0.1, 0.3, 1.0, 3.0, 10.0)
SIGMA_GRID = (0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0)
T_GRID = (1, 2, 5, 7, 10, 20, 50, 100)
TEMPERATURES = (0.0, 0.1, 0.3, 1.0)

PASS_THRESHOLD = 0.95
APPROX_THRESHOLD = 0.80

ALGORITHMS = ("spec", "deviation", "reachability", "rlsp-additive", "rlsp-bayesian", "sampler-additive")
TABLE1_ROWS = ("spec", "deviation", "reachability", "rlsp-additive")
TABLE1_ROW_LABELS = {"spec": "spec", "deviation": "deviation", "reachability": "reachability", "rlsp-additive": "rlsp"}
TABLE1_COLUMNS = ("room", "train", "apples", "batteries_easy", "batteries_hard", "far_vase")
TABLE1_HEADERS = ("Room", "Train", "Apples", "Bat-Easy", "Bat-Hard", "Far-vase")
HORIZON_ENVS = ("room", "train", "apples", "batteries_easy", "batteries_hard", "far_vase")
COMBINER_ENVS = ("room", "train", "batteries_easy", "batteries_hard", "far_vase")


class MetricUndefined(InvalidInput):
    """The optimal true return from s0 is not positive, so the fraction is meaningless."""


class Verdict(Enum):
    PASS = "✓"
    APPROX = "≈"
    FAIL = "✗"


def verdict_for(fraction: float | None) -> Verdict:
    if fraction is None:
        return Verdict.FAIL
    if fraction >= PASS_THRESHOLD:
        return Verdict.PASS
    if fraction >= APPROX_THRESHOLD:
        return Verdict.APPROX
    return Verdict.FAIL


def optimal_return(scenario: ScenarioBundle) -> float:
    r = scenario.mdp.features @ scenario.theta_true.theta
    _, V = hard_value_iteration(scenario.mdp, r, scenario.robot_horizon)
    return float(V[0, scenario.s0])


def expected_return(scenario: ScenarioBundle, policy) -> float:
    """Exact expected true return from s0 over the robot horizon."""
    H = scenario.robot_horizon
    if policy.horizon != H:
        raise InvalidInput(f"policy horizon {policy.horizon} differs from robot horizon {H}")
    mdp = scenario.mdp
    marg = forward_marginals(mdp, policy, delta(mdp.num_states, scenario.s0), H)
    return float((marg @ (mdp.features @ scenario.theta_true.theta)).sum())


def evaluate_policy(scenario: ScenarioBundle, policy) -> float:
    best = optimal_return(scenario)
    if best <= 0:
        raise MetricUndefined(f"{scenario.name}: optimal true return {best:.6g} is not positive")
    return expected_return(scenario, policy) / best


def plan_reward(scenario: ScenarioBundle, theta, temperature: float = 0.0):
    """Robot policy for a linear reward: hard VI at temperature 0, soft VI otherwise."""
    theta = theta.theta if isinstance(theta, RewardParams) else np.asarray(theta, dtype=np.float64)
    if temperature == 0:
        return hard_value_iteration(scenario.mdp, scenario.mdp.features @ theta, scenario.robot_horizon)[0]
    return soft_value_iteration(scenario.mdp, theta, scenario.robot_horizon, temperature=temperature)[0]


@dataclass(frozen=True, eq=False)
class EvalReport:
    scenario: str
    algorithm: str
    prior_mode: str
    hyperparameter: str | None
    value: float | None
    fraction_of_optimal: float | None
    verdict: Verdict
    grid: tuple = ()
    grid_fractions: tuple = ()
    theta: tuple | None = None
    feature_names: tuple | None = None
    trajectory: tuple = ()
    note: str = ""

    def __post_init__(self):
        if self.verdict is not verdict_for(self.fraction_of_optimal):
            raise InvalidInput("verdict inconsistent with fraction")

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario,
            "algorithm": self.algorithm,
            "prior_mode": self.prior_mode,
            "hyperparameter": self.hyperparameter,
            "value": self.value,
            "fraction_of_optimal": self.fraction_of_optimal,
            "verdict": self.verdict.value,
            "grid": list(self.grid),
            "grid_fractions": list(self.grid_fractions),
            "theta": None if self.theta is None else list(self.theta),
            "feature_names": None if self.feature_names is None else list(self.feature_names),
            "trajectory": list(self.trajectory),
            "note": self.note,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)

    CSV_FIELDS = ("schema_version", "scenario", "algorithm", "prior_mode", "hyperparameter", "value",
                  "fraction_of_optimal", "verdict", "note")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=self.CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        row = self.to_dict()
        w.writerow({k: row[k] for k in self.CSV_FIELDS})
        return buf.getvalue()

    def to_text(self) -> str:
        frac = "n/a" if self.fraction_of_optimal is None else f"{self.fraction_of_optimal:.4f}"
        lines = [
            f"scenario:   {self.scenario}",
            f"algorithm:  {self.algorithm} ({self.prior_mode} s_-T)",
            f"tuned:      {self.hyperparameter} = {self.value}",
            f"fraction:   {frac}  {self.verdict.value}",
        ]
        if self.theta is not None and self.feature_names is not None:
            lines.append("theta:      " + ", ".join(f"{n}={w:+.3f}" for n, w in zip(self.feature_names, self.theta)))
        if self.note:
            lines.append(f"note:       {self.note}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class Curve:
    env: str
    label: str
    fractions: tuple


@dataclass(frozen=True, eq=False)
class SweepResult:
    param: str
    grid: tuple
    curves: tuple  # of Curve, one fraction per grid value

    def __post_init__(self):
        if list(self.grid) != sorted(self.grid):
            raise InvalidInput("sweep grid must be sorted ascending")
        for c in self.curves:
            if len(c.fractions) != len(self.grid):
                raise InvalidInput(f"curve {c.env}/{c.label} has the wrong length")

    def curve(self, env: str, label: str | None = None) -> tuple:
        for c in self.curves:
            if c.env == env and (label is None or c.label == label):
                return c.fractions
        raise KeyError((env, label))

    def at(self, env: str, value, label: str | None = None):
        return self.curve(env, label)[list(self.grid).index(value)]

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "param": self.param,
            "grid": list(self.grid),
            "curves": [{"env": c.env, "label": c.label, "fractions": list(c.fractions)} for c in self.curves],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["schema_version", "param", "value", "env", "label", "fraction"])
        for c in self.curves:
            for v, f in zip(self.grid, c.fractions):
                w.writerow([SCHEMA_VERSION, self.param, v, c.env, c.label, "" if f is None else repr(f)])
        return buf.getvalue()


# -- inference with a per-process cache --------------------------------------

_INFERENCE_CACHE: dict = {}


def _scenario_config(scenario: ScenarioBundle, prior_mode: str, alice_horizon: int | None) -> RlspConfig:
    T = scenario.alice_horizon if alice_horizon is None else alice_horizon
    return RlspConfig(T, scenario.prior(prior_mode))


def infer(
    scenario: ScenarioBundle,
    prior_mode: str = "known",
    alice_horizon: int | None = None,
    mean=None,
    sigma: float = 1.0,
) -> InferredReward:
    """MAP reward for a scenario; identical requests (e.g. both batteries variants) share one run."""
    config = _scenario_config(scenario, prior_mode, alice_horizon)
    F = scenario.mdp.num_features
    mean = np.zeros(F) if mean is None else np.asarray(mean, dtype=np.float64)
    key = (id(scenario.env), scenario.s0, scenario.s_minus_T, prior_mode, config.alice_horizon, sigma, mean.tobytes())
    if key not in _INFERENCE_CACHE:
        try:
            _INFERENCE_CACHE[key] = rlsp_infer(scenario.mdp, config.with_prior(mean, sigma), scenario.s0)
        except ImpossibleEvidence as e:
            raise ImpossibleEvidence(
                f"{scenario.name} (prior={prior_mode}, T={config.alice_horizon}): {e}"
            ) from e
    return _INFERENCE_CACHE[key]


def _trajectory(scenario: ScenarioBundle, policy, seed: int) -> tuple:
    tau = sample_trajectory(
        scenario.mdp, policy, delta(scenario.mdp.num_states, scenario.s0), scenario.robot_horizon, seed
    )
    return tuple(str(scenario.env.decode(s)) for s in tau.states)


def _best(grid, fractions) -> int:
    """Index of the best fraction; ties go to the earliest grid value."""
    vals = [-np.inf if f is None else f for f in fractions]
    i = int(np.argmax(vals))
    assert all(vals[i] >= v for v in vals)
    return i


def run_scenario(
    scenario: ScenarioBundle | str,
    algorithm: str,
    tuning_grid: Sequence[float] | None = None,
    prior_mode: str = "known",
    alice_horizon: int | None = None,
    robot_horizon: int | None = None,
    seed: int = 0,
    sampler: SamplerConfig | None = None,
) -> EvalReport:
    """Run one algorithm on one scenario, tuning its hyperparameter by true-reward fraction."""
    if isinstance(scenario, str):
        scenario = get_scenario(scenario)
    if algorithm not in ALGORITHMS:
        raise InvalidInput(f"unknown algorithm {algorithm!r}; valid: {', '.join(ALGORITHMS)}")
    if prior_mode not in ("known", "uniform"):
        raise InvalidInput(f"unknown prior mode {prior_mode!r}; valid: known, uniform")
    if robot_horizon is not None:
        if robot_horizon <= 0:
            raise InvalidInput("robot_horizon must be positive")
        scenario = replace(scenario, robot_horizon=robot_horizon)
    if alice_horizon is not None and alice_horizon <= 0:
        raise InvalidInput("T must be positive")

    names = scenario.env.feature_names
    base = dict(scenario=scenario.name, algorithm=algorithm, prior_mode=prior_mode, feature_names=names)

    if algorithm == "spec":
        policy = plan_spec(scenario)
        f = evaluate_policy(scenario, policy)
        return EvalReport(**base, hyperparameter=None, value=None, fraction_of_optimal=f, verdict=verdict_for(f),
                          theta=tuple(scenario.theta_spec.theta), trajectory=_trajectory(scenario, policy, seed))

    if algorithm == "rlsp-bayesian":
        grid = tuple(SIGMA_GRID if tuning_grid is None else tuning_grid)
        param = "sigma"
    else:
        grid = tuple(LAMBDA_GRID if tuning_grid is None else tuning_grid)
        param = "lambda"
    if not grid:
        raise InvalidInput("tuning grid is empty")

    policies, thetas, note = [], [], ""
    if algorithm == "deviation":
        policies = [plan_deviation(scenario, lam) for lam in grid]
    elif algorithm == "reachability":
        try:
            cache = reachability_cache_for(scenario)
            policies = [plan_reachability(scenario, lam, cache) for lam in grid]
        except StochasticBaseline as e:
            note = f"refused: {e}"
    elif algorithm == "rlsp-additive":
        alice = infer(scenario, prior_mode, alice_horizon).theta_alice
        thetas = [combine_additive(alice, scenario.theta_spec, lam) for lam in grid]
    elif algorithm == "sampler-additive":
        cfg = _scenario_config(scenario, prior_mode, alice_horizon)
        sampler = replace(sampler or SamplerConfig(), seed=seed)
        try:
            alice = posterior_mean(mcmc_sample(scenario.mdp, cfg, scenario.s0, sampler))
        except ImpossibleEvidence as e:
            raise ImpossibleEvidence(f"{scenario.name} (prior={prior_mode}, T={cfg.alice_horizon}): {e}") from e
        thetas = [combine_additive(alice, scenario.theta_spec, lam) for lam in grid]
    else:  # rlsp-bayesian
        thetas = [infer(scenario, prior_mode, alice_horizon, scenario.theta_spec.theta, s).theta_alice for s in grid]
    if thetas:
        policies = [plan_reward(scenario, th) for th in thetas]

    if not policies:
        return EvalReport(**base, hyperparameter=param, value=None, fraction_of_optimal=None,
                          verdict=Verdict.FAIL, grid=grid, grid_fractions=(None,) * len(grid), note=note)
    fractions = tuple(evaluate_policy(scenario, p) for p in policies)
    i = _best(grid, fractions)
    theta = tuple(thetas[i].theta) if thetas else None
    return EvalReport(**base, hyperparameter=param, value=grid[i], fraction_of_optimal=fractions[i],
                      verdict=verdict_for(fractions[i]), grid=grid, grid_fractions=fractions, theta=theta,
                      trajectory=_trajectory(scenario, policies[i], seed), note=note)


# -- verdict grid ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Table1:
    prior_mode: str
    rows: tuple
    columns: tuple
    reports: tuple  # reports[i][j] for rows[i], columns[j]

    def verdicts(self) -> list[list[Verdict]]:
        return [[r.verdict for r in row] for row in self.reports]

    def glyphs(self) -> list[list[str]]:
        return [[v.value for v in row] for row in self.verdicts()]

    def row(self, algorithm: str) -> tuple[str, ...]:
        return tuple(self.glyphs()[self.rows.index(algorithm)])

    def render(self) -> str:
        label_w = max(len(TABLE1_ROW_LABELS[r]) for r in self.rows)
        heads = [TABLE1_HEADERS[TABLE1_COLUMNS.index(c)] for c in self.columns]
        cell_w = max(max(len(h) for h in heads), 14)
        out = [f"Verdict grid ({self.prior_mode} s_-T)"]
        out.append(" " * label_w + " | " + " | ".join(h.ljust(cell_w) for h in heads))
        out.append("-" * len(out[-1]))
        for name, row in zip(self.rows, self.reports):
            cells = []
            for r in row:
                frac = "  n/a " if r.fraction_of_optimal is None else f"{r.fraction_of_optimal:6.3f}"
                cells.append(f"{r.verdict.value} {frac}".ljust(cell_w))
            out.append(TABLE1_ROW_LABELS[name].ljust(label_w) + " | " + " | ".join(cells))
        notes = [f"{r.algorithm}/{r.scenario}: {r.note}" for row in self.reports for r in row if r.note]
        out.extend(f"note: {n}" for n in notes)
        return "\n".join(out) + "\n"

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "prior_mode": self.prior_mode,
            "rows": list(self.rows),
            "columns": list(self.columns),
            "cells": [[r.to_dict() for r in row] for row in self.reports],
        }


def _cell(args) -> EvalReport:
    env, algorithm, prior_mode, seed = args
    return run_scenario(env, algorithm, prior_mode=prior_mode, seed=seed)


def _pmap(fn, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def table1(prior_mode: str = "known", seed: int = 0, jobs: int = 1,
           rows: Sequence[str] = TABLE1_ROWS, columns: Sequence[str] = TABLE1_COLUMNS) -> Table1:
    """Every algorithm on every column scenario, tuned over the default grids."""
    items = [(env, alg, prior_mode, seed) for alg in rows for env in columns]
    flat = _pmap(_cell, items, jobs)
    n = len(columns)
    grid = tuple(tuple(flat[i * n:(i + 1) * n]) for i in range(len(rows)))
    return Table1(prior_mode, tuple(rows), tuple(columns), grid)


# -- sweeps -------------------------------------------------------------------


def _horizon_point(args) -> float:
    env, T, grid = args
    scenario = get_scenario(env)
    return run_scenario(scenario, "rlsp-additive", grid, prior_mode="uniform", alice_horizon=T).fraction_of_optimal


def horizon_sweep(envs: Sequence[str] | str = HORIZON_ENVS, T_grid: Sequence[int] = T_GRID,
                  lambdas: Sequence[float] = LAMBDA_GRID, jobs: int = 1) -> SweepResult:
    """RLSP with a uniform s_-T prior and an assumed Alice horizon T, robot horizon fixed."""
    envs = (envs,) if isinstance(envs, str) else tuple(envs)
    T_grid = tuple(sorted(T_grid))
    if not T_grid:
        raise InvalidInput("T grid is empty")
    items = [(env, T, tuple(lambdas)) for env in envs for T in T_grid]
    flat = _pmap(_horizon_point, items, jobs)
    n = len(T_grid)
    curves = tuple(Curve(env, "rlsp-additive", tuple(flat[i * n:(i + 1) * n])) for i, env in enumerate(envs))
    return SweepResult("T", T_grid, curves)


def _combiner_point(args) -> float:
    env, method, sigma, temperature, prior_mode = args
    scenario = get_scenario(env)
    if method == "additive":
        alice = infer(scenario, prior_mode, sigma=sigma).theta_alice
        theta = combine_additive(alice, scenario.theta_spec, 1.0)
    else:
        theta = infer(scenario, prior_mode, mean=scenario.theta_spec.theta, sigma=sigma).theta_alice
    return evaluate_policy(scenario, plan_reward(scenario, theta, temperature))


def combiner_compare(envs: Sequence[str] = COMBINER_ENVS, sigma_grid: Sequence[float] = SIGMA_GRID,
                     temperatures: Sequence[float] = TEMPERATURES, prior_mode: str = "known",
                     jobs: int = 1) -> SweepResult:
    """Additive (lambda = 1, zero-centred prior std swept) against Bayesian (spec-centred sigma swept).

    Curve labels are ``"<method>@<temperature>"``.
    """
    if 0 not in temperatures:
        raise InvalidInput("temperatures must include 0 (hard value iteration)")
    envs = tuple(e for e in envs if e != "apples")
    sigma_grid = tuple(sorted(sigma_grid))
    keys = [(env, m, t) for env in envs for t in temperatures for m in ("additive", "bayesian")]
    items = [(env, m, s, t, prior_mode) for env, m, t in keys for s in sigma_grid]
    flat = _pmap(_combiner_point, items, jobs)
    n = len(sigma_grid)
    curves = tuple(
        Curve(env, f"{m}@{t:g}", tuple(flat[i * n:(i + 1) * n])) for i, (env, m, t) in enumerate(keys)
    )
    return SweepResult("sigma", sigma_grid, curves)


def best_gap(result: SweepResult, env: str, temperature: float = 0.0) -> float:
    """``|best additive - best bayesian|`` fraction at one temperature."""
    a = max(result.curve(env, f"additive@{temperature:g}"))
    b = max(result.curve(env, f"bayesian@{temperature:g}"))
    return abs(a - b)


def prior_comparison(envs: Sequence[str] = TABLE1_COLUMNS) -> dict:
    """Inferred weights and RLSP verdicts under a known s_-T and a uniform prior."""
    out = {}
    for env in envs:
        sc = get_scenario(env)
        entry = {}
        for mode in ("known", "uniform"):
            rep = run_scenario(sc, "rlsp-additive", prior_mode=mode)
            entry[mode] = {
                "theta": dict(zip(sc.env.feature_names, infer(sc, mode).theta_alice.theta.tolist())),
                "fraction": rep.fraction_of_optimal,
                "verdict": rep.verdict.value,
            }
        out[env] = entry
    return out


__all__ = [
    "ALGORITHMS", "APPROX_THRESHOLD", "Curve", "EvalReport", "LAMBDA_GRID", "MetricUndefined", "PASS_THRESHOLD",
    "SCHEMA_VERSION", "SIGMA_GRID", "SweepResult", "T_GRID", "TEMPERATURES", "Table1", "Verdict",
    "best_gap", "combiner_compare", "evaluate_policy", "expected_return", "horizon_sweep", "infer",
    "optimal_return", "plan_reward", "prior_comparison", "run_scenario", "table1", "verdict_for",
]
