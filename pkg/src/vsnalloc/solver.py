"""Solving IlpModel instances.

Backends:

* ``builtin``  best-bound branch and bound over LP relaxations solved with the
  HiGHS dual simplex (``scipy.optimize.linprog``). Branches on the most
  fractional binary, ties to the lowest variable index, 0-child first.
* ``highs``    the HiGHS MILP solver in-process (``scipy.optimize.milp``).
* ``external:<command>``  writes the model as an LP file, runs
  ``<command> <model.lp> <solution.txt>`` and reads the solution back.
"""

from __future__ import annotations

import heapq
import os
import shlex
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

from . import lpfile
from .model import BINARY, EQ, GE, LE, IlpModel

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
TIME_LIMIT = "time_limit"

EXTERNAL_SOLVER_ENV = "VSNALLOC_EXTERNAL_SOLVER"


class SolverError(RuntimeError):
    pass


class CertificationError(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    backend: str = "builtin"
    time_limit_s: float = 300.0
    gap: float = 1e-6
    feasibility_tol: float = 1e-6
    integrality_tol: float = 1e-6
    certify: bool = True

    def resolved_backend(self) -> str:
        if self.backend == "external":
            cmd = os.environ.get(EXTERNAL_SOLVER_ENV)
            if not cmd:
                raise SolverError(f"backend 'external' needs a command or ${EXTERNAL_SOLVER_ENV}")
            return f"external:{cmd}"
        return self.backend


@dataclass(frozen=True)
class SolveStats:
    nodes: int = 0
    lp_iterations: int = 0
    wall_time: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class SolveResult:
    status: str
    objective: float | None
    bound: float | None
    values: np.ndarray | None = field(default=None, compare=False, repr=False)
    stats: SolveStats = SolveStats()
    variable_names: tuple[str, ...] = field(default=(), compare=False, repr=False)

    @property
    def assignment(self) -> dict[str, float]:
        if self.values is None:
            return {}
        return dict(zip(self.variable_names, (float(v) for v in self.values)))

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL

    def same_as(self, other: "SolveResult") -> bool:
        """Equality including the solution vector and search statistics."""
        if self != other or self.stats.nodes != other.stats.nodes:
            return False
        if (self.values is None) != (other.values is None):
            return False
        return self.values is None or bool(np.array_equal(self.values, other.values))


# -- matrix form ------------------------------------------------------------


@dataclass
class MatrixForm:
    """min c@x subject to row_lo <= A@x <= row_hi, lo <= x <= hi."""

    c: np.ndarray
    A: sparse.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    binary: np.ndarray
    sign: float

    @classmethod
    def of(cls, model: IlpModel) -> "MatrixForm":
        n, m = len(model.variables), len(model.constraints)
        sign = -1.0 if model.sense == "maximize" else 1.0
        c = np.zeros(n)
        for i, coef in model.objective:
            c[i] += sign * coef
        rows, cols, data = [], [], []
        row_lo = np.full(m, -np.inf)
        row_hi = np.full(m, np.inf)
        for r, con in enumerate(model.constraints):
            for i, coef in con.terms:
                rows.append(r)
                cols.append(i)
                data.append(coef)
            if con.sense in (LE, EQ):
                row_hi[r] = con.rhs
            if con.sense in (GE, EQ):
                row_lo[r] = con.rhs
        A = sparse.csr_matrix((data, (rows, cols)), shape=(m, n))
        lo = np.array([v.lower for v in model.variables], dtype=float)
        hi = np.array([v.upper for v in model.variables], dtype=float)
        binary = np.array([v.kind == BINARY for v in model.variables], dtype=bool)
        return cls(c, A, row_lo, row_hi, lo, hi, binary, sign)

    def linprog_args(self):
        eq = self.row_lo == self.row_hi
        ub = ~eq & np.isfinite(self.row_hi)
        lb = ~eq & np.isfinite(self.row_lo)
        blocks, rhs = [], []
        if ub.any():
            blocks.append(self.A[ub])
            rhs.append(self.row_hi[ub])
        if lb.any():
            blocks.append(-self.A[lb])
            rhs.append(-self.row_lo[lb])
        A_ub = sparse.vstack(blocks).tocsr() if blocks else None
        b_ub = np.concatenate(rhs) if rhs else None
        A_eq = self.A[eq] if eq.any() else None
        b_eq = self.row_hi[eq] if eq.any() else None
        return A_ub, b_ub, A_eq, b_eq


def _polish(model: IlpModel, form: MatrixForm, x: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=float), form.lo, form.hi)
    x[form.binary] = np.round(x[form.binary])
    return x


def _certify(model: IlpModel, x: np.ndarray, cfg: SolverConfig) -> None:
    bad = model.violations(x, cfg.feasibility_tol, cfg.integrality_tol)
    if bad:
        fam, key, lhs, rhs = bad[0]
        raise CertificationError(
            f"{len(bad)} violated rows in returned solution, first {fam}{key}: lhs={lhs} rhs={rhs}")


# -- LP relaxation ------------------------------------------------------------


@dataclass(frozen=True)
class LpResult:
    feasible: bool
    bound: float | None
    values: np.ndarray | None
    iterations: int


def _lp(form: MatrixForm, args, lo: np.ndarray, hi: np.ndarray) -> LpResult:
    A_ub, b_ub, A_eq, b_eq = args
    res = linprog(form.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=np.column_stack([lo, hi]), method="highs-ds")
    if res.status == 2:
        return LpResult(False, None, None, int(res.nit))
    if res.status == 3:
        raise SolverError("LP relaxation is unbounded")
    if res.status != 0:
        raise SolverError(f"LP relaxation failed: {res.message}")
    return LpResult(True, form.sign * float(res.fun), np.asarray(res.x), int(res.nit))


def lp_relax_solve(model: IlpModel) -> tuple[float | None, np.ndarray | None]:
    """Bound from relaxing every binary to [0, 1]; (None, None) when infeasible.

    For a maximization model the bound is an upper bound on the ILP optimum.
    """
    form = MatrixForm.of(model)
    res = _lp(form, form.linprog_args(), form.lo, form.hi)
    return res.bound, res.values


# -- built-in branch and bound --------------------------------------------------


def _branch_and_bound(model: IlpModel, cfg: SolverConfig) -> SolveResult:
    start = time.perf_counter()
    form = MatrixForm.of(model)
    args = form.linprog_args()
    names = tuple(v.name for v in model.variables)
    # Work in minimization space: smaller is better, `key` = minimized objective.
    incumbent_key, incumbent_x = np.inf, None
    nodes = iterations = 0
    heap: list[tuple[float, int, np.ndarray, np.ndarray, np.ndarray]] = []
    seq = 0

    def evaluate(lo, hi):
        nonlocal nodes, iterations, seq
        res = _lp(form, args, lo, hi)
        nodes += 1
        iterations += res.iterations
        if res.feasible:
            heapq.heappush(heap, (form.sign * res.bound, seq, lo, hi, res.values))
            seq += 1

    def gap_closed(best_key):
        if incumbent_x is None:
            return False
        return incumbent_key - best_key <= cfg.gap * max(1.0, abs(incumbent_key))

    evaluate(form.lo.copy(), form.hi.copy())
    timed_out = False
    while heap:
        key, _, lo, hi, x = heap[0]
        if gap_closed(key):
            break
        if time.perf_counter() - start > cfg.time_limit_s:
            timed_out = True
            break
        heapq.heappop(heap)
        frac = np.abs(x - np.round(x))
        frac[~form.binary] = 0.0
        frac[frac <= cfg.integrality_tol] = 0.0
        if not frac.any():
            # Rounding tiny fractions can break big-K rows; branch on the
            # largest residual fraction instead of accepting such a point.
            raw = np.abs(x - np.round(x))
            raw[~form.binary] = 0.0
            if raw.any() and model.violations(_polish(model, form, x), cfg.feasibility_tol,
                                              cfg.integrality_tol):
                frac = raw
        if not frac.any():
            if key < incumbent_key:
                incumbent_key, incumbent_x = key, x
            continue
        # Most fractional binary; argmax returns the lowest index on ties.
        j = int(np.argmax(frac))
        for value in (0.0, 1.0):
            clo, chi = lo.copy(), hi.copy()
            clo[j] = chi[j] = value
            evaluate(clo, chi)

    stats = SolveStats(nodes, iterations, time.perf_counter() - start)
    bound_key = min(heap[0][0], incumbent_key) if heap else incumbent_key
    if incumbent_x is None:
        if timed_out:
            return SolveResult(TIME_LIMIT, None, form.sign * bound_key, None, stats, names)
        return SolveResult(INFEASIBLE, None, None, None, stats, names)
    x = _polish(model, form, incumbent_x)
    status = TIME_LIMIT if timed_out else OPTIMAL
    return SolveResult(status, model.objective_value(x), form.sign * bound_key, x, stats, names)


def _refit(model: IlpModel, form: MatrixForm, x: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    """Re-solve the continuous part with the rounded binaries fixed.

    HiGHS accepts binaries within its own integrality tolerance, and the
    flows riding on a 1e-8 sensing variable survive rounding it to zero.
    """
    if not model.violations(x, cfg.feasibility_tol, cfg.integrality_tol):
        return x
    lo, hi = form.lo.copy(), form.hi.copy()
    lo[form.binary] = hi[form.binary] = x[form.binary]
    res = _lp(form, form.linprog_args(), lo, hi)
    return _polish(model, form, res.values) if res.feasible else x


# -- HiGHS MILP -----------------------------------------------------------------


def _highs(model: IlpModel, cfg: SolverConfig) -> SolveResult:
    start = time.perf_counter()
    form = MatrixForm.of(model)
    names = tuple(v.name for v in model.variables)
    constraints = [LinearConstraint(form.A, form.row_lo, form.row_hi)] if form.A.shape[0] else []
    res = milp(
        form.c, constraints=constraints, integrality=form.binary.astype(int),
        bounds=Bounds(form.lo, form.hi),
        options={"time_limit": cfg.time_limit_s, "mip_rel_gap": cfg.gap, "disp": False},
    )
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    stats = SolveStats(nodes, 0, time.perf_counter() - start)
    dual = getattr(res, "mip_dual_bound", None)
    bound = None if dual is None else form.sign * float(dual)
    if res.status == 0:
        x = _refit(model, form, _polish(model, form, res.x), cfg)
        return SolveResult(OPTIMAL, model.objective_value(x), bound, x, stats, names)
    if res.status == 2:
        return SolveResult(INFEASIBLE, None, None, None, stats, names)
    if res.status == 1:
        if res.x is None:
            return SolveResult(TIME_LIMIT, None, bound, None, stats, names)
        x = _refit(model, form, _polish(model, form, res.x), cfg)
        return SolveResult(TIME_LIMIT, model.objective_value(x), bound, x, stats, names)
    raise SolverError(f"HiGHS failed: {res.message}")


# -- external bridge -----------------------------------------------------------


def import_solution(model: IlpModel, path: str | Path) -> SolveResult:
    status, objective, bound, values = lpfile.loads_solution(model, Path(path).read_text())
    names = tuple(v.name for v in model.variables)
    if values is not None:
        values = _polish(model, MatrixForm.of(model), values)
        objective = model.objective_value(values)
    if status == INFEASIBLE:
        values, objective = None, None
    return SolveResult(status, objective, bound, values, SolveStats(), names)


def write_solution(model: IlpModel, result: SolveResult, path: str | Path) -> None:
    Path(path).write_text(
        lpfile.dumps_solution(model, result.status, result.objective, result.values, result.bound))


def _external(model: IlpModel, cfg: SolverConfig, command: str) -> SolveResult:
    start = time.perf_counter()
    with tempfile.TemporaryDirectory(prefix="vsnalloc-") as tmp:
        lp_path = Path(tmp) / "model.lp"
        sol_path = Path(tmp) / "solution.txt"
        lpfile.export_lp(model, lp_path)
        argv = shlex.split(command) + [str(lp_path), str(sol_path)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=cfg.time_limit_s + 30)
        except subprocess.TimeoutExpired:
            return SolveResult(TIME_LIMIT, None, None, None,
                               SolveStats(0, 0, time.perf_counter() - start),
                               tuple(v.name for v in model.variables))
        if proc.returncode != 0 or not sol_path.exists():
            raise SolverError(f"external solver {argv[0]!r} failed ({proc.returncode}): {proc.stderr.strip()}")
        res = import_solution(model, sol_path)
    stats = SolveStats(0, 0, time.perf_counter() - start)
    return SolveResult(res.status, res.objective, res.bound, res.values, stats, res.variable_names)


# -- entry point ------------------------------------------------------------------


def solve(model: IlpModel, config: SolverConfig | None = None) -> SolveResult:
    cfg = config or SolverConfig()
    backend = cfg.resolved_backend()
    if not model.variables:
        # Nothing to decide: feasible iff every (empty) row holds at zero.
        ok = not model.violations(np.zeros(0), cfg.feasibility_tol)
        if ok:
            return SolveResult(OPTIMAL, 0.0, 0.0, np.zeros(0), SolveStats(), ())
        return SolveResult(INFEASIBLE, None, None, None, SolveStats(), ())
    if backend == "builtin":
        result = _branch_and_bound(model, cfg)
    elif backend == "highs":
        result = _highs(model, cfg)
    elif backend.startswith("external:"):
        result = _external(model, cfg, backend.split(":", 1)[1])
    else:
        raise SolverError(f"unknown solver backend {backend!r}")
    if cfg.certify and result.values is not None:
        _certify(model, result.values, cfg)
    return result
