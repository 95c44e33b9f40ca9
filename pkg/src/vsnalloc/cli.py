"""Command line entry point: ``vsnalloc <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

from . import lpfile
from .checker import Allocation, check
from .engine import SimulationIntegrityError, Simulator, scenario_tag
from .metrics import RunMetrics, aggregate, emit_csv, plot_svg, read_csv
from .model import ObjectivePolicy, PriorState
from .scenario import GeneratorConfig, Scenario, generate_instance
from .solver import EXTERNAL_SOLVER_ENV, SolverConfig, solve, write_solution

log = logging.getLogger("vsnalloc")

PRESETS = ("reference", "desk")
DEFAULT_COSTS = (0.0, 5.0, 10.0, 20.0, 50.0)
COMPANION_COST = 10.0


def load_config(path: str | None, preset: str = "reference") -> GeneratorConfig:
    if path:
        return GeneratorConfig.load(path)
    text = resources.files("vsnalloc.configs").joinpath(f"{preset}.json").read_text()
    return GeneratorConfig.from_dict(json.loads(text))


def _policy(name: str) -> ObjectivePolicy:
    try:
        return ObjectivePolicy.parse(name)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _seeds(text: str) -> list[int]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


def _solver_config(args) -> SolverConfig:
    backend = args.solver
    if backend == "external" and not os.environ.get(EXTERNAL_SOLVER_ENV):
        raise SystemExit(f"--solver external needs ${EXTERNAL_SOLVER_ENV} or external:<path>")
    return SolverConfig(backend=backend, time_limit_s=args.time_limit_s, gap=args.gap)


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--solver", default="highs",
                   help="builtin | highs | external | external:<command> (default: highs)")
    p.add_argument("--time-limit-s", type=float, default=300.0)
    p.add_argument("--gap", type=float, default=1e-6, help="relative optimality gap")


def _scenario_from(args, seed: int) -> Scenario:
    if getattr(args, "scenario", None):
        return Scenario.load(args.scenario)
    return generate_instance(load_config(args.config, args.preset), seed)


# -- subcommands -------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = load_config(args.config, args.preset)
    try:
        if args.nodes is not None:
            cfg = resize(cfg, args.nodes)
        if args.apps is not None:
            cfg = dataclasses.replace(cfg, n_apps=args.apps)
        sc = generate_instance(cfg, args.seed)
    except ValueError as exc:
        print(exc, file=sys.stderr)
        return 2
    sc.save(args.out)
    print(f"nodes={len(sc.nodes)} sinks={list(sc.sinks)} applications={len(sc.applications)}")
    print(f"transmission_range_m={sc.tx_range:.4f}")
    print(f"interference_range_m={sc.interference_range_max:.4f}")
    print(f"big_k_bps={sc.big_k:g}")
    return 0


def resize(cfg: GeneratorConfig, n_nodes: int) -> GeneratorConfig:
    """Change the node count keeping the grid spacing (or, for random
    placement, the node density) of ``cfg``."""
    if cfg.placement == "grid":
        old, new = math.isqrt(cfg.n_nodes), math.isqrt(n_nodes)
        if new * new != n_nodes:
            raise ValueError(f"n_nodes: grid placement needs a square count, got {n_nodes}")
        scale = (new - 1) / (old - 1) if old > 1 and new > 1 else 1.0
    else:
        scale = math.sqrt(n_nodes / cfg.n_nodes)
    return dataclasses.replace(cfg, n_nodes=n_nodes, width_m=cfg.width_m * scale,
                               height_m=cfg.height_m * scale)


def run_one(scenario: Scenario, policy: ObjectivePolicy, seed: int, solver: SolverConfig,
            trace: str | None = None, snapshots: str | None = None,
            fail_on_time_limit: bool = False) -> RunMetrics:
    sim = Simulator(scenario, policy, solver, trace=bool(trace),
                    fail_on_time_limit=fail_on_time_limit)
    if snapshots:
        Path(snapshots).mkdir(parents=True, exist_ok=True)
    while sim.events:
        ev = sim.step()
        if snapshots and sim.state.live:
            write_snapshot(sim, Path(snapshots) / f"event{len(sim.energy_trace):04d}.json")
    sim.audit()
    if trace:
        sim.write_trace(trace)
    return sim.metrics(seed, scenario_tag(scenario))


def write_snapshot(sim: Simulator, path: Path) -> None:
    live, prior = sim.prior_state()
    path.write_text(json.dumps({
        "time_s": sim.state.clock,
        "live": live,
        "prior": prior_to_dict(PriorState(sim.state.active, sim.state.allocation.y,
                                          prior.residual_energy, prior.remaining_lifetime)),
        "allocation": sim.state.allocation.to_dict(),
    }, indent=1, sort_keys=True) + "\n")


def prior_to_dict(prior: PriorState) -> dict:
    return {
        "active": sorted(prior.active),
        "assignments": sorted(list(t) for t in prior.assignments),
        "residual_energy_j": list(prior.residual_energy),
        "remaining_lifetime_s": [[j, t] for j, t in sorted(prior.remaining_lifetime.items())],
    }


def prior_from_dict(d: dict) -> PriorState:
    return PriorState(
        active=frozenset(d["active"]),
        assignments=frozenset(tuple(t) for t in d["assignments"]),
        residual_energy=tuple(d["residual_energy_j"]),
        remaining_lifetime={int(j): float(t) for j, t in d["remaining_lifetime_s"]},
    )


def cmd_run(args) -> int:
    scenario = _scenario_from(args, args.seed)
    scenario = scenario.with_costs(args.delta_j, args.phi_j)
    try:
        metrics = run_one(scenario, args.policy, args.seed, _solver_config(args),
                          args.trace, args.snapshots, args.fail_on_time_limit)
    except SimulationIntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return 3
    text = metrics.dumps()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _sweep_task(job) -> tuple[str, str | None]:
    name, out_dir, scenario_src, config_src, preset, policy, delta, phi, seed, solver = job
    path = Path(out_dir) / "runs" / f"{name}.json"
    try:
        if scenario_src:
            scenario = Scenario.load(scenario_src)
        else:
            scenario = generate_instance(load_config(config_src, preset), seed)
        metrics = run_one(scenario.with_costs(delta, phi), policy, seed, solver)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(metrics.dumps())
        tmp.replace(path)
        return name, None
    except Exception:
        err = traceback.format_exc()
        path.with_suffix(".error").write_text(err)
        return name, err


def sweep_points(deltas, phis) -> list[tuple[float, float]]:
    """Cross product when both lists are given; otherwise the two one-factor
    series (delta varies at phi=10 J, phi varies at delta=10 J)."""
    if deltas is not None and phis is not None:
        return sorted({(d, p) for d in deltas for p in phis})
    pts = set()
    if deltas is not None or phis is None:
        pts.update((d, COMPANION_COST) for d in (deltas or DEFAULT_COSTS))
    if phis is not None or deltas is None:
        pts.update((COMPANION_COST, p) for p in (phis or DEFAULT_COSTS))
    return sorted(pts)


def cmd_sweep(args) -> int:
    out = Path(args.out)
    (out / "runs").mkdir(parents=True, exist_ok=True)
    solver = _solver_config(args)
    seeds = [0] if args.scenario else _seeds(args.seeds)
    jobs = []
    for delta, phi in sweep_points(args.deltas, args.phis):
        for policy in args.policies:
            for seed in seeds:
                name = f"{policy.value}_d{delta:g}_p{phi:g}_s{seed}"
                if (out / "runs" / f"{name}.json").exists():
                    continue
                jobs.append((name, str(out), args.scenario, args.config, args.preset,
                             policy, delta, phi, seed, solver))
    total = len(sweep_points(args.deltas, args.phis)) * len(args.policies) * len(seeds)
    log.info("sweep: %d runs, %d already done", total, total - len(jobs))
    failures = []
    if args.workers <= 1:
        results = map(_sweep_task, jobs)
        for name, err in results:
            if err:
                failures.append(name)
    else:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            for name, err in pool.map(_sweep_task, jobs):
                if err:
                    failures.append(name)
    runs = [RunMetrics.load(p) for p in sorted((out / "runs").glob("*.json"))]
    emit_csv(aggregate(runs), out / "summary.csv")
    print(f"{len(runs)} runs aggregated into {out / 'summary.csv'}")
    if failures:
        print(f"{len(failures)} runs failed: {', '.join(failures)}", file=sys.stderr)
        return 1
    return 0


def cmd_aggregate(args) -> int:
    runs = [RunMetrics.load(p) for p in args.runs]
    emit_csv(aggregate(runs), args.out)
    return 0


def cmd_solve_file(args) -> int:
    try:
        model = lpfile.import_lp(args.model)
    except lpfile.LpFormatError as exc:
        print(f"{args.model}: {exc}", file=sys.stderr)
        return 2
    result = solve(model, _solver_config(args))
    write_solution(model, result, args.solution)
    print(f"status={result.status} objective={result.objective}")
    return 0


def cmd_check(args) -> int:
    scenario = Scenario.load(args.scenario)
    snap = json.loads(Path(args.allocation).read_text())
    prior = prior_from_dict(snap["prior"])
    alloc = Allocation.from_dict(snap["allocation"])
    violations = check(scenario, snap["live"], prior, alloc, tol=args.tol)
    if args.json:
        print(json.dumps([dataclasses.asdict(v) for v in violations], indent=1))
    else:
        for v in violations:
            print(v)
        print(f"{len(violations)} violation(s)")
    return 0 if not violations else 1


def cmd_plot(args) -> int:
    rows = read_csv(args.summary)
    plot_svg(rows, args.out, sweep=args.sweep)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vsnalloc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a random scenario file")
    p.add_argument("--config", help="generator config (JSON); default: shipped preset")
    p.add_argument("--preset", choices=PRESETS, default="reference")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nodes", type=int, help="node count; the area is rescaled to keep the spacing")
    p.add_argument("--apps", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="simulate one scenario under one policy")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario")
    src.add_argument("--config")
    p.add_argument("--preset", choices=PRESETS, default="reference")
    p.add_argument("--policy", type=_policy, required=True,
                   help="total | maxmin | mixed | only-restrictions")
    p.add_argument("--delta-j", type=float, help="movement cost (default: scenario value)")
    p.add_argument("--phi-j", type=float, help="activation cost (default: scenario value)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--trace", help="per-event CSV log")
    p.add_argument("--snapshots", help="directory for per-event allocation snapshots")
    p.add_argument("--fail-on-time-limit", action="store_true")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="delta/phi sweep across policies and seeds")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scenario")
    src.add_argument("--config")
    p.add_argument("--preset", choices=PRESETS, default="desk")
    p.add_argument("--deltas", type=_floats)
    p.add_argument("--phis", type=_floats)
    p.add_argument("--policies", type=lambda s: [_policy(t) for t in s.split(",")],
                   default=list(ObjectivePolicy))
    p.add_argument("--seeds", default="0-19")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("aggregate", help="summarize run metric files into CSV")
    p.add_argument("runs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("solve-file", help="solve an LP file, write a solution file")
    p.add_argument("model")
    p.add_argument("solution")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_solve_file)

    p = sub.add_parser("check", help="validate an allocation snapshot")
    p.add_argument("--scenario", required=True)
    p.add_argument("--allocation", required=True)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("plot", help="SVG line charts from a summary CSV")
    p.add_argument("summary")
    p.add_argument("--out", required=True)
    p.add_argument("--sweep", choices=("delta", "phi"), default="delta")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
