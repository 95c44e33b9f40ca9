"""Model-free validation of a concrete allocation.

Every constraint is re-derived from the scenario and re-evaluated directly;
nothing here reads an IlpModel. The solver and model builder are tested
against this module.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .model import PriorState
from .scenario import Scenario, coverage_set, link_viable


@dataclass(frozen=True)
class Allocation:
    """Concrete values of every decision of one arrival problem.

    ``flows`` maps (i, h, j) to bits/second of application j sent from i to h;
    ``routes`` maps a node to its next hop; ``lam`` holds the residual-energy
    slack of non-sink nodes, when known.
    """

    y: frozenset[tuple[int, int, int]] = frozenset()
    x: frozenset[int] = frozenset()
    flows: Mapping[tuple[int, int, int], float] = field(default_factory=dict)
    routes: Mapping[int, int] = field(default_factory=dict)
    lam: Mapping[int, float] = field(default_factory=dict)

    def link_flows(self) -> dict[tuple[int, int], float]:
        out: dict[tuple[int, int], float] = defaultdict(float)
        for (i, h, _), f in self.flows.items():
            out[i, h] += f
        return dict(out)

    def referenced_nodes(self, eps: float = 0.0) -> frozenset[int]:
        """Nodes that sense a test point or carry flow above ``eps``."""
        nodes = {i for i, _, _ in self.y}
        for (i, h, _), f in self.flows.items():
            if f > eps:
                nodes.update((i, h))
        return frozenset(nodes)

    def to_dict(self) -> dict:
        return {
            "y": sorted(list(t) for t in self.y),
            "x": sorted(self.x),
            "flows_bps": [[i, h, j, f] for (i, h, j), f in sorted(self.flows.items())],
            "routes": [[i, h] for i, h in sorted(self.routes.items())],
            "lambda_j": [[i, v] for i, v in sorted(self.lam.items())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Allocation":
        return cls(
            y=frozenset(tuple(t) for t in d.get("y", [])),
            x=frozenset(d.get("x", [])),
            flows={(int(i), int(h), int(j)): float(f) for i, h, j, f in d.get("flows_bps", [])},
            routes={int(i): int(h) for i, h in d.get("routes", [])},
            lam={int(i): float(v) for i, v in d.get("lambda_j", [])},
        )


@dataclass(frozen=True)
class Violation:
    family: str
    index: tuple
    lhs: float
    rhs: float
    detail: str = ""

    def __str__(self) -> str:
        s = f"{self.family}{self.index}: lhs={self.lhs:.9g} rhs={self.rhs:.9g}"
        return f"{s} ({self.detail})" if self.detail else s


@dataclass(frozen=True)
class EnergyBreakdown:
    activation: float
    movement: float
    transmit: float
    receive: float
    processing: float
    available: float

    @property
    def residual(self) -> float:
        return self.available - (self.activation + self.movement + self.transmit
                                 + self.receive + self.processing)

    @property
    def magnitude(self) -> float:
        return max(1.0, self.available, self.activation + self.movement + self.transmit
                   + self.receive + self.processing)


def energy_breakdown(scenario: Scenario, live: Iterable[int], prior: PriorState,
                     alloc: Allocation, i: int) -> EnergyBreakdown:
    """Energy node ``i`` commits until every live application ends."""
    radio = scenario.radio
    live = set(live)
    apps = scenario.applications
    activation = scenario.activation_cost if (i in alloc.x and i not in prior.active) else 0.0
    movement = processing = transmit = receive = 0.0
    for (node, j, k) in alloc.y:
        if node != i or j not in live:
            continue
        if (node, j, k) not in prior.assignments:
            movement += scenario.movement_cost
        processing += apps[j].proc_power * prior.remaining_lifetime[j]
    for (a, b, j), f in alloc.flows.items():
        if j not in live or f == 0.0:
            continue
        dt = prior.remaining_lifetime[j]
        if a == i:
            d = math.dist(scenario.nodes[a].position, scenario.nodes[b].position)
            transmit += (radio.beta1 + radio.beta2 * d**radio.gamma) * f * dt
        if b == i:
            receive += radio.rho * f * dt
    return EnergyBreakdown(activation, movement, transmit, receive, processing,
                           prior.residual_energy[i])


def _exceeds(lhs: float, rhs: float, tol: float, *scale: float) -> bool:
    return lhs - rhs > tol * max(1.0, abs(rhs), abs(lhs), *scale)


def _differs(lhs: float, rhs: float, tol: float, *scale: float) -> bool:
    return abs(lhs - rhs) > tol * max(1.0, abs(rhs), abs(lhs), *scale)


def _conflicts(scenario: Scenario, link: tuple[int, int], other: tuple[int, int]) -> bool:
    """Whether ``other`` consumes airtime of ``link`` under the protocol model."""
    i, h = link
    g, t = other
    if {g, t} & {i, h}:
        return True
    pos = [n.position for n in scenario.nodes]
    if scenario.interference_power == "p_max":
        r_it = r_gt = (scenario.radio.p_max * scenario.radio.g0 / scenario.radio.beta) ** (1 / scenario.radio.gamma)
    else:
        ratio = (scenario.radio.alpha / scenario.radio.beta) ** (1 / scenario.radio.gamma)
        r_it = math.dist(pos[i], pos[h]) * ratio
        r_gt = math.dist(pos[g], pos[t]) * ratio
    return math.dist(pos[i], pos[t]) < r_it or math.dist(pos[g], pos[h]) < r_gt


def check(scenario: Scenario, live: Iterable[int], prior: PriorState, alloc: Allocation,
          tol: float = 1e-6) -> list[Violation]:
    """All constraint violations of ``alloc``; empty when it is feasible."""
    live = sorted(set(live))
    apps = scenario.applications
    n = len(scenario.nodes)
    sinks = set(scenario.sinks)
    K = scenario.big_k
    out: list[Violation] = []

    # Sensing assignment.
    sensed_by: dict[tuple[int, int], list[int]] = defaultdict(list)
    for i, j, k in alloc.y:
        if j not in live or k not in apps[j].test_points:
            out.append(Violation("coverage_set", (i, j, k), 1, 0, "assignment of a non-live task"))
            continue
        sensed_by[j, k].append(i)
        if i not in coverage_set(scenario, j, k):
            out.append(Violation("coverage_set", (i, j, k), 1, 0, "node does not cover test point"))
    for j in live:
        for k in apps[j].test_points:
            count = len(sensed_by[j, k])
            if count != 1:
                out.append(Violation("coverage", (j, k), count, 1))
    tasks = defaultdict(list)
    for i, j, k in alloc.y:
        if j in live:
            tasks[i].append(j)
    for i, js in tasks.items():
        for j in set(js):
            if js.count(j) > scenario.n_max:
                out.append(Violation("n_max", (i, j), js.count(j), scenario.n_max))
        mem = sum(apps[j].memory for j in js)
        cpu = sum(apps[j].cpu_load for j in js)
        if _exceeds(mem, scenario.nodes[i].memory, tol):
            out.append(Violation("memory", (i,), mem, scenario.nodes[i].memory))
        if _exceeds(cpu, scenario.nodes[i].cpu, tol):
            out.append(Violation("cpu", (i,), cpu, scenario.nodes[i].cpu))

    # Flow variables must be nonnegative and leave non-sink nodes only.
    for (i, h, j), f in alloc.flows.items():
        if f < -tol * max(1.0, abs(f)):
            out.append(Violation("nonnegativity", (i, h, j), f, 0.0))
        if i == h or i in sinks or j not in live:
            if f != 0.0:
                out.append(Violation("route_flow", (i, h, j), f, 0.0, "flow on a non-existent link"))

    link = alloc.link_flows()
    # Per-application conservation at non-sinks.
    for j in live:
        c = apps[j].source_rate
        inflow = defaultdict(float)
        outflow = defaultdict(float)
        for (a, b, jj), f in alloc.flows.items():
            if jj == j:
                outflow[a] += f
                inflow[b] += f
        sourced = defaultdict(float)
        for i, jj, k in alloc.y:
            if jj == j:
                sourced[i] += c
        for i in scenario.non_sinks:
            bal = inflow[i] + sourced[i] - outflow[i]
            if _differs(bal, 0.0, tol, inflow[i], sourced[i], outflow[i]):
                out.append(Violation("flow_conservation", (j, i), inflow[i] + sourced[i], outflow[i]))

    # Everything generated reaches a sink.
    generated = sum(apps[j].total_rate for j in live)
    absorbed = sum(f for (a, b), f in link.items() if b in sinks)
    absorbed += sum(apps[j].source_rate for i, j, k in alloc.y if i in sinks and j in live)
    if _differs(absorbed, generated, tol):
        out.append(Violation("sink_balance", (), absorbed, generated))

    # Activation coupling.
    load = defaultdict(float)
    for (a, b), f in link.items():
        load[b] += f
    for i, j, k in alloc.y:
        if j in live:
            load[i] += apps[j].source_rate
    for i in range(n):
        cap = K if i in alloc.x else 0.0
        if _exceeds(load[i], cap, tol):
            out.append(Violation("activation", (i,), load[i], cap))

    # Single-path routing over viable links.
    for i, h in alloc.routes.items():
        if i == h or not link_viable(scenario, i, h):
            out.append(Violation("link", (i, h), 1, 0))
    for (i, h), f in link.items():
        cap = K if alloc.routes.get(i) == h else 0.0
        if _exceeds(f, cap, tol):
            out.append(Violation("route_flow", (i, h), f, cap))

    # Airtime of every viable link of a non-sink transmitter.
    used = {lk: f for lk, f in link.items() if f != 0.0}
    for i in scenario.non_sinks:
        for h in range(n):
            if h == i or not link_viable(scenario, i, h):
                continue
            share = sum(f / scenario.link_capacity(*lk)
                        for lk, f in used.items() if _conflicts(scenario, (i, h), lk))
            if _exceeds(share, 1.0, tol):
                out.append(Violation("airtime", (i, h), share, 1.0))

    # Energy of non-sink nodes.
    for i in scenario.non_sinks:
        e = energy_breakdown(scenario, live, prior, alloc, i)
        detail = (f"activation={e.activation:.6g} movement={e.movement:.6g} "
                  f"transmit={e.transmit:.6g} receive={e.receive:.6g} "
                  f"processing={e.processing:.6g} available={e.available:.6g}")
        if e.residual < -tol * e.magnitude:
            out.append(Violation("energy", (i,), e.available - e.residual, e.available, detail))
        elif i in alloc.lam and _differs(alloc.lam[i], e.residual, tol, e.magnitude):
            out.append(Violation("energy_slack", (i,), alloc.lam[i], e.residual, detail))
        elif i in alloc.lam and alloc.lam[i] > e.available + tol * e.magnitude:
            out.append(Violation("energy_slack", (i,), alloc.lam[i], e.available, detail))
    return out


# -- conversions between allocations and model assignments ---------------------


def allocation_from_values(model, values: np.ndarray) -> Allocation:
    """Read an Allocation out of a model solution vector."""
    y, x, flows, routes, lam = set(), set(), {}, {}, {}
    for v, val in zip(model.variables, values):
        kind, *idx = v.key
        if kind == "y" and val > 0.5:
            y.add(tuple(idx))
        elif kind == "x" and val > 0.5:
            x.add(idx[0])
        elif kind == "b" and val > 0.5:
            routes[idx[0]] = idx[1]
        elif kind == "f" and len(idx) == 3 and val != 0.0:
            flows[tuple(idx)] = float(val)
        elif kind == "lam" and idx:
            lam[idx[0]] = float(val)
    return Allocation(frozenset(y), frozenset(x), flows, routes, lam)


def values_from_allocation(model, alloc: Allocation) -> np.ndarray:
    """Model solution vector encoding ``alloc``; aggregated flows and the
    max-min auxiliary are derived."""
    link = alloc.link_flows()
    values = np.zeros(len(model.variables))
    lam_min = min(alloc.lam.values()) if alloc.lam else 0.0
    for pos, v in enumerate(model.variables):
        kind, *idx = v.key
        if kind == "y":
            values[pos] = float(tuple(idx) in alloc.y)
        elif kind == "x":
            values[pos] = float(idx[0] in alloc.x)
        elif kind == "b":
            values[pos] = float(alloc.routes.get(idx[0]) == idx[1])
        elif kind == "f" and len(idx) == 3:
            values[pos] = alloc.flows.get(tuple(idx), 0.0)
        elif kind == "f":
            values[pos] = link.get(tuple(idx), 0.0)
        elif kind == "lam":
            values[pos] = alloc.lam.get(idx[0], 0.0) if idx else lam_min
    return values
