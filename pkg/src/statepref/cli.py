"""Command-line entry point: ``python -m statepref <command> ...``."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, fields

from . import harness
from .gridworlds import ENV_ALIASES, SCENARIOS, get_scenario
from .mdp import InvalidInput
from .rlsp import ImpossibleEvidence

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IMPOSSIBLE = 3
FORMATS = ("json", "csv", "text")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    env: str = "room"
    algorithm: str = "rlsp-additive"
    prior_mode: str = "known"
    T: int | None = None
    robot_horizon: int | None = None
    lam: float | None = None
    sigma: float | None = None
    seed: int = 0
    output_path: str | None = None
    format: str = "text"

    def validate(self) -> None:
        name = ENV_ALIASES.get(self.env, self.env)
        if name not in SCENARIOS:
            raise ConfigError(f"unknown env {self.env!r}; valid: {', '.join(SCENARIOS)}")
        if self.algorithm not in harness.ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; valid: {', '.join(harness.ALGORITHMS)}")
        if self.prior_mode not in ("known", "uniform"):
            raise ConfigError(f"unknown prior {self.prior_mode!r}; valid: known, uniform")
        if self.format not in FORMATS:
            raise ConfigError(f"unknown format {self.format!r}; valid: {', '.join(FORMATS)}")
        for key in ("T", "robot_horizon"):
            v = getattr(self, key)
            if v is not None and v <= 0:
                raise ConfigError(f"{key} must be positive")
        if self.lam is not None and self.lam < 0:
            raise ConfigError("lambda must be non-negative")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigError("sigma must be positive")

    def tuning_grid(self):
        if self.algorithm == "rlsp-bayesian":
            return None if self.sigma is None else [self.sigma]
        return None if self.lam is None else [self.lam]


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    known = {f.name for f in fields(RunConfig)} | {"jobs"}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(extra))}")
    return data


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _render(obj, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(obj.to_dict(), indent=2, ensure_ascii=False) + "\n"
    if fmt == "csv":
        return obj.to_csv()
    return obj.to_text() if hasattr(obj, "to_text") else obj.render()


def cmd_run(config: RunConfig) -> int:
    config.validate()
    report = harness.run_scenario(
        config.env,
        config.algorithm,
        config.tuning_grid(),
        prior_mode=config.prior_mode,
        alice_horizon=config.T,
        robot_horizon=config.robot_horizon,
        seed=config.seed,
    )
    _emit(_render(report, config.format), config.output_path)
    return EXIT_OK


def _table1_csv(table: harness.Table1) -> str:
    lines = ["schema_version,prior_mode,algorithm,env,value,fraction_of_optimal,verdict,note"]
    for alg, row in zip(table.rows, table.reports):
        for env, r in zip(table.columns, row):
            frac = "" if r.fraction_of_optimal is None else repr(r.fraction_of_optimal)
            val = "" if r.value is None else repr(r.value)
            note = json.dumps(r.note, ensure_ascii=False) if r.note else ""
            lines.append(f"{harness.SCHEMA_VERSION},{table.prior_mode},{alg},{env},{val},{frac},{r.verdict.value},{note}")
    return "\n".join(lines) + "\n"


def cmd_table1(prior_mode: str, seed: int, jobs: int, fmt: str, output: str | None) -> int:
    if prior_mode not in ("known", "uniform"):
        raise ConfigError(f"unknown prior {prior_mode!r}; valid: known, uniform")
    table = harness.table1(prior_mode, seed=seed, jobs=jobs)
    if fmt == "json":
        text = json.dumps(table.to_dict(), indent=2, ensure_ascii=False) + "\n"
    elif fmt == "csv":
        text = _table1_csv(table)
    else:
        text = table.render()
    _emit(text, output)
    return EXIT_OK


def cmd_sweep(kind: str, envs: list[str] | None, jobs: int, fmt: str, output: str | None) -> int:
    if envs:
        for e in envs:
            if ENV_ALIASES.get(e, e) not in SCENARIOS:
                raise ConfigError(f"unknown env {e!r}; valid: {', '.join(SCENARIOS)}")
        envs = [ENV_ALIASES.get(e, e) for e in envs]
    if kind == "horizon":
        result = harness.horizon_sweep(envs or harness.HORIZON_ENVS, jobs=jobs)
    else:
        result = harness.combiner_compare(envs or harness.COMBINER_ENVS, jobs=jobs)
    text = result.to_json() + "\n" if fmt == "json" else result.to_csv()
    _emit(text, output)
    return EXIT_OK


def cmd_list_envs(fmt: str) -> int:
    entries = []
    for name in SCENARIOS:
        sc = get_scenario(name)
        entries.append({"name": name, "num_states": sc.mdp.num_states, "features": list(sc.env.feature_names)})
    if fmt == "json":
        sys.stdout.write(json.dumps({"schema_version": harness.SCHEMA_VERSION, "envs": entries}, indent=2) + "\n")
    else:
        for e in entries:
            sys.stdout.write(f"{e['name']} ({e['num_states']} states): {', '.join(e['features'])}\n")
    return EXIT_OK


def cmd_dump_env(env: str, output: str | None) -> int:
    if ENV_ALIASES.get(env, env) not in SCENARIOS:
        raise ConfigError(f"unknown env {env!r}; valid: {', '.join(SCENARIOS)}")
    sc = get_scenario(env)
    data = {"schema_version": harness.SCHEMA_VERSION, "scenario": sc.to_dict(), "mdp": sc.mdp.to_dict()}
    _emit(json.dumps(data) + "\n", output)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="statepref", description="Reward inference from an observed state.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one algorithm on one environment")
    run.add_argument("--config", help="JSON file with run settings; flags override it")
    run.add_argument("--env")
    run.add_argument("--alg", dest="algorithm")
    run.add_argument("--prior", dest="prior_mode")
    run.add_argument("--T", type=int)
    run.add_argument("--robot-horizon", type=int)
    run.add_argument("--lambda", dest="lam", type=float, help="fixed lambda, skips tuning")
    run.add_argument("--sigma", type=float, help="fixed sigma for rlsp-bayesian, skips tuning")
    run.add_argument("--seed", type=int)
    run.add_argument("--format")
    run.add_argument("--output", dest="output_path")

    t1 = sub.add_parser("table1", help="verdict grid over all environments")
    t1.add_argument("--prior", default="known")
    t1.add_argument("--seed", type=int, default=0)
    t1.add_argument("--jobs", type=int, default=1)
    t1.add_argument("--format", choices=FORMATS, default="text")
    t1.add_argument("--output")

    sw = sub.add_parser("sweep", help="horizon or combiner sweep as CSV")
    sw.add_argument("kind", choices=("horizon", "combiner"))
    sw.add_argument("--env", action="append", dest="envs")
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--format", choices=("csv", "json"), default="csv")
    sw.add_argument("--output")

    le = sub.add_parser("list-envs", help="environment names and feature labels")
    le.add_argument("--format", choices=("text", "json"), default="text")

    de = sub.add_parser("dump-env", help="scenario and MDP as JSON")
    de.add_argument("env")
    de.add_argument("--output")
    return p


def _run_config(args) -> RunConfig:
    data = _load_config(args.config)
    data.pop("jobs", None)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            data[f.name] = v
    try:
        return RunConfig(**data)
    except TypeError as e:
        raise ConfigError(str(e)) from e


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    try:
        if args.command == "run":
            return cmd_run(_run_config(args))
        if args.command == "table1":
            return cmd_table1(args.prior, args.seed, args.jobs, args.format, args.output)
        if args.command == "sweep":
            return cmd_sweep(args.kind, args.envs, args.jobs, args.format, args.output)
        if args.command == "list-envs":
            return cmd_list_envs(args.format)
        return cmd_dump_env(args.env, args.output)
    except (ConfigError, KeyError) as e:
        print(f"error: {e.args[0] if e.args else e}", file=sys.stderr)
        return EXIT_CONFIG
    except ImpossibleEvidence as e:
        print(f"impossible evidence: {e}", file=sys.stderr)
        return EXIT_IMPOSSIBLE
    except InvalidInput as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


__all__ = ["RunConfig", "build_parser", "main"]
