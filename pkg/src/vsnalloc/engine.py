"""Event-driven simulation of application arrivals and departures.

Only arrivals trigger a re-optimization. Fixed costs (activation, movement)
are charged at the accept instant; radio and processing power drain
continuously between events.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .checker import Allocation, allocation_from_values, check
from .metrics import RunMetrics
from .model import ObjectivePolicy, PriorState, StructuralInfeasibility, build_model
from .scenario import Scenario
from .solver import INFEASIBLE, OPTIMAL, TIME_LIMIT, SolverConfig, solve

log = logging.getLogger(__name__)

DEPARTURE, ARRIVAL = 0, 1
ENERGY_TOL = 1e-6
FLOW_EPS = 1e-9


class SimulationIntegrityError(RuntimeError):
    pass


@dataclass(order=True, frozen=True)
class Event:
    time: float
    kind: int
    app: int


@dataclass
class NetworkState:
    clock: float
    residual_energy: list[float]
    active: frozenset[int] = frozenset()
    allocation: Allocation = field(default_factory=Allocation)
    live: dict[int, tuple[float, float]] = field(default_factory=dict)
    drained: list[float] = field(default_factory=list)
    charged: list[float] = field(default_factory=list)

    @classmethod
    def initial(cls, scenario: Scenario) -> "NetworkState":
        n = len(scenario.nodes)
        return cls(0.0, [node.initial_energy for node in scenario.nodes],
                   drained=[0.0] * n, charged=[0.0] * n)

    def serialize(self) -> str:
        return json.dumps({
            "clock": self.clock,
            "residual_energy": self.residual_energy,
            "active": sorted(self.active),
            "allocation": self.allocation.to_dict(),
            "live": sorted([j, t, e] for j, (t, e) in self.live.items()),
            "drained": self.drained,
            "charged": self.charged,
        }, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()


@dataclass(frozen=True)
class Decision:
    accepted: bool
    movements: int = 0
    activations: int = 0
    reason: str = ""


def node_power(scenario: Scenario, alloc: Allocation) -> list[float]:
    """Instantaneous power draw (W) of every node under ``alloc``."""
    radio = scenario.radio
    power = [0.0] * len(scenario.nodes)
    for i, j, _ in alloc.y:
        power[i] += scenario.applications[j].proc_power
    for (i, h, _), f in alloc.flows.items():
        power[i] += radio.tx_energy_per_bit(scenario.distance(i, h)) * f
        power[h] += radio.rho * f
    return power


def _clean(alloc: Allocation, scenario: Scenario) -> Allocation:
    """Drop numerical-noise flows and activations of nodes with no role."""
    flows = {key: f for key, f in alloc.flows.items() if f > FLOW_EPS * scenario.big_k}
    roles = Allocation(alloc.y, alloc.x, flows).referenced_nodes()
    routes = {i: h for i, h in alloc.routes.items() if i in roles}
    return Allocation(alloc.y, roles, flows, routes)


class Simulator:
    """One simulation run over a scenario under a fixed objective policy."""

    def __init__(self, scenario: Scenario, policy: ObjectivePolicy | str,
                 solver: SolverConfig | None = None, *, fail_on_time_limit: bool = False,
                 verify: bool = True, trace: bool = False):
        self.scenario = scenario
        self.policy = ObjectivePolicy.parse(policy) if isinstance(policy, str) else policy
        self.solver = solver or SolverConfig()
        self.fail_on_time_limit = fail_on_time_limit
        self.verify = verify
        self.state = NetworkState.initial(scenario)
        self.events: list[Event] = [Event(a.arrival_time, ARRIVAL, a.id) for a in scenario.applications]
        heapq.heapify(self.events)
        self.deployed = self.rejected = self.movements = self.activations = 0
        self.energy_trace: list[tuple[float, float, float]] = []
        self.trace_rows: list[dict] = [] if trace else None
        self.last_solution = None

    # -- energy ---------------------------------------------------------------

    def drain_energy(self, until: float) -> None:
        st = self.state
        if until < st.clock:
            raise SimulationIntegrityError(f"clock moving backwards: {st.clock} -> {until}")
        dt = until - st.clock
        if dt > 0:
            for i, p in enumerate(node_power(self.scenario, st.allocation)):
                if self.scenario.nodes[i].is_sink or p == 0.0:
                    continue
                used = p * dt
                st.residual_energy[i] -= used
                st.drained[i] += used
                if st.residual_energy[i] < -ENERGY_TOL:
                    raise SimulationIntegrityError(
                        f"node {i} drained below zero ({st.residual_energy[i]:.9g} J) at t={until}")
        st.clock = until

    def _charge(self, i: int, joules: float) -> None:
        if self.scenario.nodes[i].is_sink or joules == 0.0:
            return
        self.state.residual_energy[i] -= joules
        self.state.charged[i] += joules

    # -- events ---------------------------------------------------------------

    def prior_state(self, new_app: int | None = None) -> tuple[list[int], PriorState]:
        st = self.state
        apps = self.scenario.applications
        remaining = {j: t + e - st.clock for j, (t, e) in st.live.items()}
        if new_app is not None:
            remaining[new_app] = apps[new_app].lifetime
        prior = PriorState(
            active=st.active, assignments=st.allocation.y,
            residual_energy=tuple(st.residual_energy), remaining_lifetime=remaining,
        )
        return sorted(remaining), prior

    def on_arrival(self, j: int) -> Decision:
        app = self.scenario.applications[j]
        st = self.state
        if st.clock != app.arrival_time:
            raise SimulationIntegrityError(f"arrival of {j} handled at t={st.clock}")
        live, prior = self.prior_state(j)
        try:
            model = build_model(self.scenario, live, prior, self.policy)
        except StructuralInfeasibility as exc:
            return Decision(False, reason=str(exc))
        result = solve(model, self.solver)
        self.last_solution = (model, result)
        if result.status == INFEASIBLE:
            return Decision(False, reason="infeasible")
        if result.status == TIME_LIMIT:
            if self.fail_on_time_limit:
                raise SimulationIntegrityError(f"solver hit the time limit on arrival {j}")
            return Decision(False, reason="time limit")
        assert result.status == OPTIMAL

        raw = allocation_from_values(model, result.values)
        new = _clean(raw, self.scenario)
        if self.verify:
            # The raw solution carries the solver's slacks, so this also checks
            # that they match the recomputed energy balance.
            for label, alloc in (("solver", raw), ("applied", new)):
                bad = check(self.scenario, live, prior, alloc)
                if bad:
                    raise SimulationIntegrityError(
                        f"{label} allocation for arrival {j} fails validation: "
                        + "; ".join(map(str, bad[:3])))

        gained = new.y - st.allocation.y
        movements = sum(1 for (_, jj, _) in gained if jj != j)
        newly_active = new.x - st.active
        for i in newly_active:
            self._charge(i, self.scenario.activation_cost)
        for i, _, _ in gained:
            self._charge(i, self.scenario.movement_cost)
        for i in self.scenario.non_sinks:
            if st.residual_energy[i] < -ENERGY_TOL:
                raise SimulationIntegrityError(f"fixed charges overdraw node {i}")
        st.allocation = Allocation(new.y, new.x, new.flows, new.routes)
        st.active = new.x
        st.live[j] = (app.arrival_time, app.lifetime)
        heapq.heappush(self.events, Event(app.departure_time, DEPARTURE, j))
        return Decision(True, movements, len(newly_active))

    def on_departure(self, j: int) -> None:
        st = self.state
        if j not in st.live:
            raise SimulationIntegrityError(f"departure of unknown application {j}")
        del st.live[j]
        old = st.allocation
        y = frozenset(t for t in old.y if t[1] != j)
        flows = {key: f for key, f in old.flows.items() if key[2] != j}
        kept = Allocation(y, frozenset(), flows, old.routes)
        roles = kept.referenced_nodes()
        routes = {i: h for i, h in old.routes.items() if i in roles}
        st.allocation = Allocation(y, roles, flows, routes)
        st.active = roles

    # -- main loop --------------------------------------------------------------

    def step(self) -> Event:
        ev = heapq.heappop(self.events)
        self.drain_energy(ev.time)
        if ev.kind == DEPARTURE:
            self.on_departure(ev.app)
            decision = None
        else:
            decision = self.on_arrival(ev.app)
            if decision.accepted:
                self.deployed += 1
                self.movements += decision.movements
                self.activations += decision.activations
            else:
                self.rejected += 1
        self._record(ev, decision)
        return ev

    def _record(self, ev: Event, decision: Decision | None) -> None:
        energies = [self.state.residual_energy[i] for i in self.scenario.non_sinks]
        lo = min(energies) if energies else 0.0
        total = sum(energies)
        self.energy_trace.append((ev.time, lo, total))
        if self.trace_rows is not None:
            if decision is None:
                label = "-"
            else:
                label = "accepted" if decision.accepted else "rejected"
            self.trace_rows.append({
                "time_s": ev.time,
                "event": ("departure" if ev.kind == DEPARTURE else "arrival") + f":{ev.app}",
                "decision": label,
                "deployed": self.deployed,
                "rejected": self.rejected,
                "movements": self.movements,
                "activations": self.activations,
                "min_residual_j": lo,
                "total_residual_j": total,
            })

    def run(self) -> None:
        while self.events:
            self.step()
        self.audit()

    def audit(self, tol: float = ENERGY_TOL) -> None:
        """Closed-loop energy bookkeeping check."""
        st = self.state
        for i in self.scenario.non_sinks:
            expected = self.scenario.nodes[i].initial_energy - st.drained[i] - st.charged[i]
            if abs(expected - st.residual_energy[i]) > tol:
                raise SimulationIntegrityError(
                    f"energy audit failed on node {i}: {expected} != {st.residual_energy[i]}")
            if st.residual_energy[i] < -tol:
                raise SimulationIntegrityError(f"node {i} ended with negative energy")

    def metrics(self, seed: int | None = None, tag: str = "") -> RunMetrics:
        return RunMetrics(
            policy=self.policy.value,
            delta=self.scenario.movement_cost,
            phi=self.scenario.activation_cost,
            seed=seed,
            deployed=self.deployed,
            rejected=self.rejected,
            movements=self.movements,
            activations=self.activations,
            energy_trace=list(self.energy_trace),
            scenario_tag=tag or scenario_tag(self.scenario),
        )

    def write_trace(self, path: str | Path) -> None:
        if self.trace_rows is None:
            raise ValueError("simulator was created without trace=True")
        fields = ["time_s", "event", "decision", "deployed", "rejected", "movements",
                  "activations", "min_residual_j", "total_residual_j"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            w.writerows(self.trace_rows)


def scenario_tag(scenario: Scenario) -> str:
    return f"{len(scenario.nodes)}n{len(scenario.sinks)}s{len(scenario.applications)}a"


def run(scenario: Scenario, policy: ObjectivePolicy | str, seed: int | None = None,
        solver: SolverConfig | None = None, **kwargs) -> RunMetrics:
    sim = Simulator(scenario, policy, solver, **kwargs)
    sim.run()
    return sim.metrics(seed)
