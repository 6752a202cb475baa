"""Print the verdict grid for the known and uniform s_-T priors and save JSON next to it."""

import argparse
import json
import time
from pathlib import Path

from statepref.harness import prior_comparison, table1


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--prior", choices=("known", "uniform", "both"), default="both")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("results"))
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    modes = ("known", "uniform") if args.prior == "both" else (args.prior,)
    for mode in modes:
        start = time.perf_counter()
        t = table1(mode, jobs=args.jobs)
        print(t.render())
        print(f"({time.perf_counter() - start:.0f}s)\n")
        (args.out / f"table1_{mode}.json").write_text(json.dumps(t.to_dict(), indent=2, ensure_ascii=False))
    if args.prior == "both":
        comparison = prior_comparison()
        (args.out / "prior_comparison.json").write_text(json.dumps(comparison, indent=2, ensure_ascii=False))
        for env, entry in comparison.items():
            print(f"{env:15s} known {entry['known']['verdict']}  uniform {entry['uniform']['verdict']}")


if __name__ == "__main__":
    main()
