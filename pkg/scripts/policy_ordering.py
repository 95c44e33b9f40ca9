"""Mean deployments and churn per policy on the desk preset at delta = phi = 10 J.

    python scripts/policy_ordering.py --seeds 20

Prints one line per policy and whether the expected ordering holds: mixed
deploys at least as many apps as only-restrictions, and the two policies
that ignore total energy (only-restrictions, maxmin) move and activate more.
"""

import argparse
import statistics
import time

from vsnalloc.cli import load_config, run_one
from vsnalloc.model import ObjectivePolicy
from vsnalloc.scenario import generate_instance
from vsnalloc.solver import SolverConfig


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--cost", type=float, default=10.0)
    args = ap.parse_args(argv)

    cfg = load_config(None, "desk")
    solver = SolverConfig(backend="highs")
    runs = {p: [] for p in ObjectivePolicy}
    for seed in range(args.seeds):
        sc = generate_instance(cfg, seed).with_costs(args.cost, args.cost)
        for policy in ObjectivePolicy:
            t0 = time.perf_counter()
            m = run_one(sc, policy, seed, solver)
            runs[policy].append(m)
            print(f"seed {seed:2d} {policy.value:18s} deployed {m.deployed:3d} "
                  f"movements {m.movements:3d} activations {m.activations:3d} "
                  f"({time.perf_counter() - t0:.1f} s)", flush=True)

    mean = {p: {k: statistics.fmean(getattr(m, k) for m in ms) for k in ("deployed", "movements", "activations")}
            for p, ms in runs.items()}
    print()
    for p, row in mean.items():
        print(f"{p.value:18s} " + "  ".join(f"{k} {v:7.2f}" for k, v in row.items()))
    P = ObjectivePolicy
    churn = {p: mean[p]["movements"] + mean[p]["activations"] for p in P}
    print("mixed deploys >= only-restrictions:", mean[P.MIXED]["deployed"] >= mean[P.ONLY_RESTRICTIONS]["deployed"])
    print("churn ordering holds:",
          all(churn[a] > churn[b] for a in (P.ONLY_RESTRICTIONS, P.MAXMIN) for b in (P.TOTAL, P.MIXED)))


if __name__ == "__main__":
    main()
