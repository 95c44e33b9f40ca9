"""Per-arrival integer linear program.

The builder emits one row family per constraint group of the allocation
problem. Row families:

    coverage          every test point of every live app sensed exactly once
    n_max             per (node, app) cap on sensed test points
    memory, cpu       node storage / processing budgets
    flow_aggregate    f(i,h) = sum_j f(i,h,j)
    flow_conservation per-app conservation at non-sink nodes
    sink_balance      generated traffic equals traffic absorbed at sinks
    activation        inflow + sourced traffic <= K x(i)
    link              b(i,h) <= l(i,h)
    single_route      at most one next hop per node
    route_flow        f(i,h) <= K b(i,h)
    airtime           protocol-interference airtime per viable link
    energy            residual-energy balance of every non-sink node
    maxmin            lam <= lam(i)

Constraint "y = 0 outside the coverage set" is realized by never declaring
those variables. Sinks absorb traffic and declare no outgoing flow.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .scenario import Scenario, coverage_set, link_viable

BINARY = "binary"
CONTINUOUS = "continuous"
LE, EQ, GE = "<=", "=", ">="


class ObjectivePolicy(str, enum.Enum):
    TOTAL = "total"
    MAXMIN = "maxmin"
    MIXED = "mixed"
    ONLY_RESTRICTIONS = "only-restrictions"

    @classmethod
    def parse(cls, name: str) -> "ObjectivePolicy":
        key = name.strip().lower().replace("_", "-")
        aliases = {"max-min": "maxmin", "only": "only-restrictions", "restrictions": "only-restrictions"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            choices = ", ".join(p.value for p in cls)
            raise ValueError(f"unknown policy {name!r}; choose one of {{{choices}}}") from None


class StructuralInfeasibility(Exception):
    """A live application has a test point no node can cover."""

    def __init__(self, app: int, test_point: int):
        super().__init__(f"test point {test_point} of application {app} is not covered by any node")
        self.app = app
        self.test_point = test_point


class StateCorruption(Exception):
    pass


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str
    lower: float
    upper: float
    key: tuple


@dataclass(frozen=True)
class Constraint:
    family: str
    key: tuple
    terms: tuple[tuple[int, float], ...]
    sense: str
    rhs: float


@dataclass(frozen=True)
class IlpModel:
    variables: tuple[Variable, ...]
    constraints: tuple[Constraint, ...]
    objective: tuple[tuple[int, float], ...]
    sense: str = "maximize"
    name: str = "vsn"

    def __post_init__(self):
        n = len(self.variables)
        for row in self.constraints:
            for idx, _ in row.terms:
                if not 0 <= idx < n:
                    raise ValueError(f"row {row.family}{row.key} references undeclared variable {idx}")
        for idx, _ in self.objective:
            if not 0 <= idx < n:
                raise ValueError(f"objective references undeclared variable {idx}")
        for v in self.variables:
            if v.kind == BINARY and (v.lower < 0 or v.upper > 1):
                raise ValueError(f"binary variable {v.name} has bounds outside [0, 1]")

    @property
    def index(self) -> dict[str, int]:
        return {v.name: i for i, v in enumerate(self.variables)}

    @property
    def by_key(self) -> dict[tuple, int]:
        return {v.key: i for i, v in enumerate(self.variables)}

    def family_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for row in self.constraints:
            out[row.family] = out.get(row.family, 0) + 1
        return out

    def objective_value(self, values: np.ndarray) -> float:
        return float(sum(c * values[i] for i, c in self.objective))

    def violations(self, values: np.ndarray, tol: float = 1e-6,
                   integrality_tol: float = 1e-6) -> list[tuple[str, tuple, float, float]]:
        """Rows, bounds and integrality requirements violated by ``values``.

        Row tolerance is relative to the magnitude of the row activity.
        """
        out = []
        for v, x in zip(self.variables, values):
            scale = max(1.0, abs(x))
            if x < v.lower - tol * scale or x > v.upper + tol * scale:
                out.append(("bound", (v.name,), float(x), v.lower if x < v.lower else v.upper))
            if v.kind == BINARY and abs(x - round(x)) > integrality_tol:
                out.append(("integrality", (v.name,), float(x), float(round(x))))
        for row in self.constraints:
            parts = [c * values[i] for i, c in row.terms]
            lhs = float(sum(parts))
            scale = max([1.0, abs(row.rhs)] + [abs(p) for p in parts])
            gap = lhs - row.rhs
            bad = (row.sense == LE and gap > tol * scale) or \
                  (row.sense == GE and gap < -tol * scale) or \
                  (row.sense == EQ and abs(gap) > tol * scale)
            if bad:
                out.append((row.family, row.key, lhs, row.rhs))
        return out


@dataclass(frozen=True)
class PriorState:
    """Network state just before an arrival, as seen by the optimizer."""

    active: frozenset[int]
    assignments: frozenset[tuple[int, int, int]]
    residual_energy: tuple[float, ...]
    remaining_lifetime: Mapping[int, float]

    def __post_init__(self):
        for i, j, k in self.assignments:
            if i not in self.active:
                raise StateCorruption(f"node {i} senses ({j},{k}) but is not active")
        for j, dt in self.remaining_lifetime.items():
            if not dt > 0:
                raise StateCorruption(f"application {j} has non-positive remaining lifetime {dt}")

    @classmethod
    def idle(cls, scenario: Scenario, remaining: Mapping[int, float] | None = None) -> "PriorState":
        return cls(
            active=frozenset(), assignments=frozenset(),
            residual_energy=tuple(n.initial_energy for n in scenario.nodes),
            remaining_lifetime=dict(remaining or {}),
        )


def var_name(key: tuple) -> str:
    """Bijective mangling of a semantic key such as ("f", 3, 4, 1) into "f_3_4_1"."""
    return "_".join(str(part) for part in key)


def parse_var_name(name: str) -> tuple:
    head, *rest = name.split("_")
    return (head, *(int(r) for r in rest))


class ModelBuilder:
    """Mutable accumulator; ``freeze`` sorts variables by semantic key."""

    def __init__(self, name: str = "vsn"):
        self.name = name
        self._vars: dict[tuple, Variable] = {}
        self._rows: list[tuple[str, tuple, list[tuple[tuple, float]], str, float]] = []
        self._objective: list[tuple[tuple, float]] = []

    def add_var(self, key: tuple, kind: str, lower: float = 0.0, upper: float = np.inf) -> tuple:
        if key in self._vars:
            raise ValueError(f"variable {key} declared twice")
        if kind == BINARY:
            lower, upper = max(lower, 0.0), min(upper, 1.0)
        self._vars[key] = Variable(var_name(key), kind, float(lower), float(upper), key)
        return key

    def has(self, key: tuple) -> bool:
        return key in self._vars

    def add_row(self, family: str, key: tuple, terms: Iterable[tuple[tuple, float]],
                sense: str, rhs: float) -> None:
        merged: dict[tuple, float] = {}
        for var, coef in terms:
            if var not in self._vars:
                raise KeyError(f"row {family}{key} uses undeclared variable {var}")
            merged[var] = merged.get(var, 0.0) + coef
        self._rows.append((family, key, list(merged.items()), sense, float(rhs)))

    def set_objective(self, terms: Iterable[tuple[tuple, float]]) -> None:
        self._objective = list(terms)

    def freeze(self) -> IlpModel:
        keys = sorted(self._vars)
        pos = {k: i for i, k in enumerate(keys)}
        variables = tuple(self._vars[k] for k in keys)
        rows = tuple(
            Constraint(fam, key, tuple((pos[v], c) for v, c in terms), sense, rhs)
            for fam, key, terms, sense, rhs in self._rows
        )
        objective = tuple((pos[v], c) for v, c in self._objective if c != 0.0)
        return IlpModel(variables, rows, objective, name=self.name)


# -- variable families ------------------------------------------------------

def _coverage(scenario: Scenario, live: Iterable[int]) -> dict[tuple[int, int], frozenset[int]]:
    cover = {}
    for j in sorted(live):
        for k in scenario.applications[j].test_points:
            s = coverage_set(scenario, j, k)
            if not s:
                raise StructuralInfeasibility(j, k)
            cover[j, k] = s
    return cover


def transmit_pairs(scenario: Scenario) -> list[tuple[int, int]]:
    """Ordered pairs (i, h) that carry flow variables: i is a non-sink, h != i."""
    n = len(scenario.nodes)
    return [(i, h) for i in scenario.non_sinks for h in range(n) if h != i]


def declare_variables(b: ModelBuilder, scenario: Scenario, live: list[int],
                      cover: Mapping[tuple[int, int], frozenset[int]]) -> None:
    for (j, k), nodes in cover.items():
        for i in nodes:
            b.add_var(("y", i, j, k), BINARY)
    for i in range(len(scenario.nodes)):
        b.add_var(("x", i), BINARY)
    for i, h in transmit_pairs(scenario):
        b.add_var(("b", i, h), BINARY)
        b.add_var(("f", i, h), CONTINUOUS)
        for j in live:
            b.add_var(("f", i, h, j), CONTINUOUS)


def _sensed(scenario: Scenario, live: list[int], cover, i: int):
    """(key, app) for every y variable hosted on node i."""
    return [(("y", i, j, k), j) for (j, k), nodes in cover.items() if i in nodes]


# -- constraint families ----------------------------------------------------

def add_coverage_constraints(b: ModelBuilder, scenario: Scenario, live: list[int], cover) -> None:
    for (j, k), nodes in cover.items():
        b.add_row("coverage", (j, k), [(("y", i, j, k), 1.0) for i in sorted(nodes)], EQ, 1.0)
    for i in range(len(scenario.nodes)):
        for j in live:
            terms = [(("y", i, j, k), 1.0) for k in scenario.applications[j].test_points
                     if i in cover[j, k]]
            if terms:
                b.add_row("n_max", (i, j), terms, LE, scenario.n_max)


def add_budget_constraints(b: ModelBuilder, scenario: Scenario, live: list[int], cover) -> None:
    for node in scenario.nodes:
        hosted = _sensed(scenario, live, cover, node.id)
        if not hosted:
            continue
        apps = scenario.applications
        b.add_row("memory", (node.id,), [(y, apps[j].memory) for y, j in hosted], LE, node.memory)
        b.add_row("cpu", (node.id,), [(y, apps[j].cpu_load) for y, j in hosted], LE, node.cpu)


def add_flow_constraints(b: ModelBuilder, scenario: Scenario, live: list[int], cover) -> None:
    pairs = transmit_pairs(scenario)
    apps = scenario.applications
    n = len(scenario.nodes)
    for i, h in pairs:
        b.add_row("flow_aggregate", (i, h),
                  [(("f", i, h), 1.0)] + [(("f", i, h, j), -1.0) for j in live], EQ, 0.0)
    sinks = set(scenario.sinks)
    for j in live:
        c = apps[j].source_rate
        for i in scenario.non_sinks:
            terms = [(("f", g, i, j), 1.0) for g in scenario.non_sinks if g != i]
            terms += [(("f", i, h, j), -1.0) for h in range(n) if h != i]
            terms += [(("y", i, j, k), c) for k in apps[j].test_points if i in cover[j, k]]
            b.add_row("flow_conservation", (j, i), terms, EQ, 0.0)
    total = sum(apps[j].total_rate for j in live)
    terms = []
    for h in sorted(sinks):
        terms += [(("f", i, h), 1.0) for i in scenario.non_sinks]
        terms += [(y, apps[j].source_rate) for y, j in _sensed(scenario, live, cover, h)]
    if terms or total:
        b.add_row("sink_balance", (), terms, EQ, total)
    K = scenario.big_k
    for i in range(n):
        terms = [(("f", g, i), 1.0) for g in scenario.non_sinks if g != i]
        terms += [(y, apps[j].source_rate) for y, j in _sensed(scenario, live, cover, i)]
        terms.append((("x", i), -K))
        b.add_row("activation", (i,), terms, LE, 0.0)


def add_routing_constraints(b: ModelBuilder, scenario: Scenario) -> None:
    K = scenario.big_k
    pairs = transmit_pairs(scenario)
    for i, h in pairs:
        b.add_row("link", (i, h), [(("b", i, h), 1.0)], LE, 1.0 if link_viable(scenario, i, h) else 0.0)
    for i in scenario.non_sinks:
        b.add_row("single_route", (i,), [(("b", i, h), 1.0) for ii, h in pairs if ii == i], LE, 1.0)
    for i, h in pairs:
        b.add_row("route_flow", (i, h), [(("f", i, h), 1.0), (("b", i, h), -K)], LE, 0.0)


def conflicting_links(scenario: Scenario, i: int, h: int,
                      links: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Links sharing airtime with (i, h): itself, every link touching i or h,
    links whose receiver hears i, and links whose transmitter reaches h."""
    d = scenario.distances
    r_i = scenario.link_interference_range(i, h)
    out = []
    for g, t in links:
        if g in (i, h) or t in (i, h):
            out.append((g, t))
        elif d[i, t] < r_i or d[g, h] < scenario.link_interference_range(g, t):
            out.append((g, t))
    return out


def add_interference_constraints(b: ModelBuilder, scenario: Scenario) -> None:
    pairs = transmit_pairs(scenario)
    viable = [(i, h) for i, h in pairs if link_viable(scenario, i, h)]
    for i, h in viable:
        terms = [(("f", g, t), 1.0 / scenario.link_capacity(g, t))
                 for g, t in conflicting_links(scenario, i, h, viable)]
        b.add_row("airtime", (i, h), terms, LE, 1.0)


def add_energy_constraints(b: ModelBuilder, scenario: Scenario, live: list[int], cover,
                           prior: PriorState) -> None:
    radio = scenario.radio
    apps = scenario.applications
    n = len(scenario.nodes)
    d = scenario.distances
    phi, delta = scenario.activation_cost, scenario.movement_cost
    for i in scenario.non_sinks:
        energy = prior.residual_energy[i]
        if energy < 0:
            raise StateCorruption(f"node {i} has negative residual energy {energy}")
        terms = []
        if i not in prior.active:
            terms.append((("x", i), phi))
        for y, j in _sensed(scenario, live, cover, i):
            dt = prior.remaining_lifetime[j]
            cost = apps[j].proc_power * dt
            if (i, j, y[3]) not in prior.assignments:
                cost += delta
            terms.append((y, cost))
        for j in live:
            dt = prior.remaining_lifetime[j]
            for h in range(n):
                if h == i:
                    continue
                terms.append((("f", i, h, j), dt * radio.tx_energy_per_bit(d[i, h])))
                if not scenario.nodes[h].is_sink:
                    terms.append((("f", h, i, j), dt * radio.rho))
        terms.append((("lam", i), 1.0))
        b.add_row("energy", (i,), terms, EQ, energy)


def set_objective(b: ModelBuilder, scenario: Scenario, policy: ObjectivePolicy) -> None:
    policy = ObjectivePolicy(policy)
    slacks = [("lam", i) for i in scenario.non_sinks]
    if policy is ObjectivePolicy.ONLY_RESTRICTIONS or not slacks:
        b.set_objective([])
        return
    if policy is ObjectivePolicy.TOTAL:
        b.set_objective([(s, 1.0) for s in slacks])
        return
    upper = max(b._vars[s].upper for s in slacks)
    b.add_var(("lam",), CONTINUOUS, 0.0, upper)
    for s in slacks:
        b.add_row("maxmin", (s[1],), [(("lam",), 1.0), (s, -1.0)], LE, 0.0)
    if policy is ObjectivePolicy.MAXMIN:
        b.set_objective([(("lam",), 1.0)])
    else:
        w = 1.0 / len(slacks)
        b.set_objective([(("lam",), 1.0)] + [(s, w) for s in slacks])


def build_model(scenario: Scenario, live: Iterable[int], prior: PriorState,
                policy: ObjectivePolicy | str) -> IlpModel:
    """ILP for the arrival event whose live set (arriving app included) is ``live``.

    Raises StructuralInfeasibility when a live test point has no covering node.
    """
    policy = ObjectivePolicy.parse(policy) if isinstance(policy, str) else policy
    live = sorted(set(live))
    missing = [j for j in live if j not in prior.remaining_lifetime]
    if missing:
        raise ValueError(f"no remaining lifetime for live applications {missing}")
    cover = _coverage(scenario, live)
    b = ModelBuilder(name=f"vsn_{policy.value}")
    declare_variables(b, scenario, live, cover)
    for i in scenario.non_sinks:
        b.add_var(("lam", i), CONTINUOUS, 0.0, max(prior.residual_energy[i], 0.0))
    add_coverage_constraints(b, scenario, live, cover)
    add_budget_constraints(b, scenario, live, cover)
    add_flow_constraints(b, scenario, live, cover)
    add_routing_constraints(b, scenario)
    add_interference_constraints(b, scenario)
    add_energy_constraints(b, scenario, live, cover, prior)
    set_objective(b, scenario, policy)
    return b.freeze()
