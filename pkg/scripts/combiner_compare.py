"""Additive against Bayesian reward combination across sigma and planning temperature; writes CSV."""

import argparse
from pathlib import Path

from statepref.harness import COMBINER_ENVS, SIGMA_GRID, TEMPERATURES, best_gap, combiner_compare


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--env", action="append", dest="envs", help="repeatable; default: all but apples")
    p.add_argument("--temperature", type=float, nargs="+", default=list(TEMPERATURES))
    p.add_argument("--prior", choices=("known", "uniform"), default="known")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("results/combiner_compare.csv"))
    args = p.parse_args()

    envs = args.envs or COMBINER_ENVS
    res = combiner_compare(envs, SIGMA_GRID, args.temperature, args.prior, jobs=args.jobs)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(res.to_csv())
    print("curve".ljust(32) + "".join(f"s={s:g}".rjust(8) for s in res.grid))
    for c in res.curves:
        print(f"{c.env}/{c.label}".ljust(32) + "".join(f"{f:8.3f}" for f in c.fractions))
    for env in {c.env for c in res.curves}:
        print(f"{env}: best-setting gap at temperature 0 = {best_gap(res, env):.3f}")


if __name__ == "__main__":
    main()
