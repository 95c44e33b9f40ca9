"""External-solver bridge backed by the HiGHS Python bindings.

Usage (as a solver command)::

    vsnalloc run ... --solver "external:python3 scripts/highs_bridge.py"

The bridge is called as ``highs_bridge.py <model.lp> <solution.txt>`` and
writes the plain-text solution format read by ``vsnalloc.solver``.
"""

import argparse
import math
import sys

import highspy


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("model")
    ap.add_argument("solution")
    ap.add_argument("--time-limit-s", type=float, default=300.0)
    ap.add_argument("--gap", type=float, default=1e-6)
    args = ap.parse_args(argv)

    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("time_limit", args.time_limit_s)
    h.setOptionValue("mip_rel_gap", args.gap)
    if h.readModel(args.model) != highspy.HighsStatus.kOk:
        print(f"HiGHS could not read {args.model}", file=sys.stderr)
        return 2
    h.run()
    status = h.getModelStatus()
    info = h.getInfo()
    lines = ["# highs_bridge"]
    if status == highspy.HighsModelStatus.kOptimal:
        lines.append("@status optimal")
    elif status in (highspy.HighsModelStatus.kInfeasible,
                    highspy.HighsModelStatus.kUnboundedOrInfeasible):
        lines.append("@status infeasible")
    elif status == highspy.HighsModelStatus.kTimeLimit:
        lines.append("@status time_limit")
    else:
        print(f"HiGHS finished with status {h.modelStatusToString(status)}", file=sys.stderr)
        return 1
    has_solution = status in (highspy.HighsModelStatus.kOptimal, highspy.HighsModelStatus.kTimeLimit) \
        and info.primal_solution_status == 2
    if has_solution:
        lines.append(f"@objective {info.objective_function_value!r}")
    bound = getattr(info, "mip_dual_bound", None)
    if bound is not None and math.isfinite(bound):
        lines.append(f"@bound {bound!r}")
    if has_solution:
        values = h.getSolution().col_value
        for i, x in enumerate(values):
            lines.append(f"{h.getColName(i)[1]} {x!r}")
    with open(args.solution, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
