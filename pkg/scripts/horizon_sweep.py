"""RLSP with a uniform s_-T prior over a range of assumed Alice horizons; writes CSV."""

import argparse
from pathlib import Path

from statepref.harness import HORIZON_ENVS, T_GRID, horizon_sweep


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--env", action="append", dest="envs", help="repeatable; default: all environments")
    p.add_argument("--T", type=int, nargs="+", default=list(T_GRID))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("results/horizon_sweep.csv"))
    args = p.parse_args()

    res = horizon_sweep(args.envs or HORIZON_ENVS, args.T, jobs=args.jobs)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(res.to_csv())
    print("env".ljust(16) + "".join(f"T={T}".rjust(8) for T in res.grid))
    for c in res.curves:
        print(c.env.ljust(16) + "".join(f"{f:8.3f}" for f in c.fractions))


if __name__ == "__main__":
    main()
