"""Cost sweeps on a preset and the two metric-vs-cost figures.

    python scripts/reproduce_figures.py --out results/desk --preset desk --workers 4

Runs are resumable: rerunning skips every run whose metrics file exists.
The reference preset (36 nodes, 200 apps) takes hours per seed with max-min
policies; the desk preset is the practical default.
"""

import argparse
import sys
from pathlib import Path

from vsnalloc.cli import main as cli


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/desk")
    ap.add_argument("--preset", choices=("desk", "reference"), default="desk")
    ap.add_argument("--seeds", default="0-19")
    ap.add_argument("--costs", default="0,5,10,20,50", help="values for both delta and phi")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--solver", default="highs")
    args = ap.parse_args(argv)

    out = Path(args.out)
    common = ["--preset", args.preset, "--seeds", args.seeds, "--workers", str(args.workers),
              "--solver", args.solver]
    status = 0
    for sweep in ("delta", "phi"):
        target = out / sweep
        status |= cli(["sweep", *common, f"--{sweep}s", args.costs, "--out", str(target)])
        cli(["plot", str(target / "summary.csv"), "--sweep", sweep, "--out", str(out / f"{sweep}.svg")])
        print(f"wrote {out / f'{sweep}.svg'}")
    return status


if __name__ == "__main__":
    sys.exit(main())
