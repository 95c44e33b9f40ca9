"""Problem instances: sensor nodes, test points, applications and the radio model.

Units are SI throughout (meters, seconds, watts, joules, bits/second, bytes,
MIPS). Serialized files carry the unit in every key name.
"""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

FORMAT_VERSION = 1
INTERFERENCE_MODES = ("p_max", "link")


class ConnectivityWarning(UserWarning):
    """A non-sink node has no viable radio link."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(watts: float) -> float:
    return 10.0 * math.log10(watts) + 30.0


@dataclass(frozen=True)
class RadioModel:
    g0: float = 8.1e-3
    gamma: float = 4.0
    p_max: float = dbm_to_watts(-10.0)
    alpha: float = dbm_to_watts(-92.0)
    beta: float = dbm_to_watts(-104.0)
    beta1: float = 50e-9
    beta2: float = 0.0013e-12
    rho: float = 50e-9

    def __post_init__(self):
        for name in ("g0", "gamma", "p_max", "alpha", "beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"radio.{name} must be positive")
        for name in ("beta1", "beta2", "rho"):
            if getattr(self, name) < 0:
                raise ValueError(f"radio.{name} must be nonnegative")

    def tx_energy_per_bit(self, distance: float) -> float:
        """Joules per transmitted bit over ``distance`` meters."""
        return self.beta1 + self.beta2 * distance**self.gamma


def transmission_range(radio: RadioModel, p: float) -> float:
    """Distance at which received power ``p * g0 * d**-gamma`` drops to alpha."""
    if not p > 0:
        raise ValueError(f"transmit power must be positive, got {p!r}")
    return (p * radio.g0 / radio.alpha) ** (1.0 / radio.gamma)


def interference_range(radio: RadioModel, p: float) -> float:
    if not p > 0:
        raise ValueError(f"transmit power must be positive, got {p!r}")
    return (p * radio.g0 / radio.beta) ** (1.0 / radio.gamma)


@dataclass(frozen=True)
class SensorNode:
    id: int
    position: tuple[float, float]
    bandwidth: float = 250e3
    memory: float = 256e6
    cpu: float = 720.0
    initial_energy: float = 32400.0
    is_sink: bool = False

    def __post_init__(self):
        for name in ("bandwidth", "memory", "cpu", "initial_energy"):
            if getattr(self, name) < 0:
                raise ValueError(f"node {self.id}: {name} must be nonnegative")


@dataclass(frozen=True)
class Application:
    id: int
    arrival_time: float
    lifetime: float
    test_points: tuple[int, ...]
    source_rate: float = 12e3
    memory: float = 842e3
    cpu_load: float = 69.23
    proc_power: float = 0.2

    def __post_init__(self):
        if not self.lifetime > 0:
            raise ValueError(f"application {self.id}: lifetime must be positive")
        if not self.test_points:
            raise ValueError(f"application {self.id}: needs at least one test point")
        for name in ("source_rate", "memory", "cpu_load"):
            if not getattr(self, name) > 0:
                raise ValueError(f"application {self.id}: {name} must be positive")
        if self.proc_power < 0:
            raise ValueError(f"application {self.id}: proc_power must be nonnegative")

    @property
    def departure_time(self) -> float:
        return self.arrival_time + self.lifetime

    @property
    def total_rate(self) -> float:
        return len(self.test_points) * self.source_rate


def default_big_k(applications: Sequence[Application]) -> float:
    return max(2.0 * sum(a.total_rate for a in applications), 1.0)


@dataclass(frozen=True)
class Scenario:
    nodes: tuple[SensorNode, ...]
    test_points: tuple[tuple[float, float], ...]
    applications: tuple[Application, ...]
    width: float = 141.0
    height: float = 141.0
    sensing_range: float = 40.0
    n_max: int = 1
    activation_cost: float = 10.0
    movement_cost: float = 10.0
    radio: RadioModel = field(default_factory=RadioModel)
    big_k: float | None = None
    interference_power: str = "p_max"

    def __post_init__(self):
        for pos, n in enumerate(self.nodes):
            if n.id != pos:
                raise ValueError(f"node ids must be 0..n-1 in order (got {n.id} at {pos})")
            x, y = n.position
            if not (0 <= x <= self.width and 0 <= y <= self.height):
                raise ValueError(f"node {n.id} lies outside the {self.width}x{self.height} area")
        for pos, a in enumerate(self.applications):
            if a.id != pos:
                raise ValueError(f"application ids must be 0..m-1 in order (got {a.id} at {pos})")
            for k in a.test_points:
                if not 0 <= k < len(self.test_points):
                    raise ValueError(f"application {a.id}: unknown test point {k}")
        if self.interference_power not in INTERFERENCE_MODES:
            raise ValueError(f"interference_power must be one of {INTERFERENCE_MODES}")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.big_k is None:
            object.__setattr__(self, "big_k", default_big_k(self.applications))
        elif not self.big_k > 0:
            raise ValueError("big_k must be positive")

    # -- derived sets -------------------------------------------------------

    @cached_property
    def sinks(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.nodes if n.is_sink)

    @cached_property
    def non_sinks(self) -> tuple[int, ...]:
        return tuple(n.id for n in self.nodes if not n.is_sink)

    @cached_property
    def distances(self) -> np.ndarray:
        pos = np.array([n.position for n in self.nodes], dtype=float).reshape(-1, 2)
        return np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(axis=-1))

    @cached_property
    def tx_range(self) -> float:
        return transmission_range(self.radio, self.radio.p_max)

    @cached_property
    def interference_range_max(self) -> float:
        return interference_range(self.radio, self.radio.p_max)

    def distance(self, i: int, h: int) -> float:
        return float(self.distances[i, h])

    def link_capacity(self, i: int, h: int) -> float:
        return min(self.nodes[i].bandwidth, self.nodes[h].bandwidth)

    def link_interference_range(self, i: int, h: int) -> float:
        """Interference radius of transmitter ``i`` while it sends to ``h``."""
        if self.interference_power == "p_max":
            return self.interference_range_max
        # Power just sufficient to reach h: p = alpha * d**gamma / g0.
        r = self.radio
        return self.distance(i, h) * (r.alpha / r.beta) ** (1.0 / r.gamma)

    def with_costs(self, movement_cost: float | None = None,
                   activation_cost: float | None = None) -> "Scenario":
        changes = {}
        if movement_cost is not None:
            changes["movement_cost"] = float(movement_cost)
        if activation_cost is not None:
            changes["activation_cost"] = float(activation_cost)
        return dataclasses.replace(self, **changes)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        r = self.radio
        return {
            "format_version": FORMAT_VERSION,
            "area": {"width_m": self.width, "height_m": self.height},
            "sensing_range_m": self.sensing_range,
            "n_max": self.n_max,
            "activation_cost_j": self.activation_cost,
            "movement_cost_j": self.movement_cost,
            "big_k_bps": self.big_k,
            "interference_power": self.interference_power,
            "radio": {
                "g0": r.g0,
                "gamma": r.gamma,
                "p_max_w": r.p_max,
                "alpha_w": r.alpha,
                "beta_w": r.beta,
                "beta1_j_per_bit": r.beta1,
                "beta2_j_per_bit_per_m_gamma": r.beta2,
                "rho_j_per_bit": r.rho,
            },
            "nodes": [
                {
                    "id": n.id,
                    "x_m": n.position[0],
                    "y_m": n.position[1],
                    "bandwidth_bps": n.bandwidth,
                    "memory_bytes": n.memory,
                    "cpu_mips": n.cpu,
                    "energy_j": n.initial_energy,
                    "is_sink": n.is_sink,
                }
                for n in self.nodes
            ],
            "test_points": [{"x_m": x, "y_m": y} for x, y in self.test_points],
            "applications": [
                {
                    "id": a.id,
                    "arrival_time_s": a.arrival_time,
                    "lifetime_s": a.lifetime,
                    "test_points": list(a.test_points),
                    "source_rate_bps": a.source_rate,
                    "memory_bytes": a.memory,
                    "cpu_mips": a.cpu_load,
                    "proc_power_w": a.proc_power,
                }
                for a in self.applications
            ],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "Scenario":
        version = d.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported scenario format_version {version!r}")
        r = d["radio"]
        radio = RadioModel(
            g0=r["g0"], gamma=r["gamma"], p_max=r["p_max_w"], alpha=r["alpha_w"],
            beta=r["beta_w"], beta1=r["beta1_j_per_bit"],
            beta2=r["beta2_j_per_bit_per_m_gamma"], rho=r["rho_j_per_bit"],
        )
        nodes = tuple(
            SensorNode(
                id=n["id"], position=(n["x_m"], n["y_m"]), bandwidth=n["bandwidth_bps"],
                memory=n["memory_bytes"], cpu=n["cpu_mips"], initial_energy=n["energy_j"],
                is_sink=n["is_sink"],
            )
            for n in d["nodes"]
        )
        apps = tuple(
            Application(
                id=a["id"], arrival_time=a["arrival_time_s"], lifetime=a["lifetime_s"],
                test_points=tuple(a["test_points"]), source_rate=a["source_rate_bps"],
                memory=a["memory_bytes"], cpu_load=a["cpu_mips"], proc_power=a["proc_power_w"],
            )
            for a in d["applications"]
        )
        return cls(
            nodes=nodes,
            test_points=tuple((t["x_m"], t["y_m"]) for t in d["test_points"]),
            applications=apps,
            width=d["area"]["width_m"],
            height=d["area"]["height_m"],
            sensing_range=d["sensing_range_m"],
            n_max=d["n_max"],
            activation_cost=d["activation_cost_j"],
            movement_cost=d["movement_cost_j"],
            radio=radio,
            big_k=d["big_k_bps"],
            interference_power=d.get("interference_power", "p_max"),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "Scenario":
        return cls.loads(Path(path).read_text())


def coverage_set(scenario: Scenario, j: int, k: int) -> frozenset[int]:
    """Nodes (sinks included) whose sensing disc contains test point ``k`` of app ``j``.

    The boundary is inclusive.
    """
    app = scenario.applications[j]
    if k not in app.test_points:
        raise KeyError(f"test point {k} is not targeted by application {j}")
    tx, ty = scenario.test_points[k]
    rs = scenario.sensing_range
    return frozenset(
        n.id for n in scenario.nodes
        if math.hypot(n.position[0] - tx, n.position[1] - ty) <= rs
    )


def link_viable(scenario: Scenario, i: int, h: int) -> bool:
    if i == h:
        raise ValueError("a node has no link to itself")
    return scenario.distance(i, h) <= scenario.tx_range


# -- instance generation -----------------------------------------------------


@dataclass
class GeneratorConfig:
    """Parameters of a random instance. Defaults reproduce the reference setup."""

    n_nodes: int = 36
    width_m: float = 141.0
    height_m: float = 141.0
    placement: str = "grid"
    n_sinks: int = 2
    sink_indices: list[int] | None = None
    n_apps: int = 200
    arrival_rate_per_h: float = 1.0
    lifetime_h: float = 5.0
    test_points_per_app: int = 3
    n_max: int = 1
    sensing_range_m: float = 40.0
    bandwidth_bps: float = 250e3
    memory_bytes: float = 256e6
    cpu_mips: float = 720.0
    energy_j: float = 32400.0
    source_rate_bps: float = 12e3
    app_memory_bytes: float = 842e3
    app_cpu_mips: float = 69.23
    proc_power_w: float = 0.2
    activation_cost_j: float = 10.0
    movement_cost_j: float = 10.0
    p_max_dbm: float = -10.0
    alpha_dbm: float = -92.0
    beta_dbm: float = -104.0
    g0: float = 8.1e-3
    gamma: float = 4.0
    beta1_j_per_bit: float = 50e-9
    beta2_j_per_bit_per_m_gamma: float = 0.0013e-12
    rho_j_per_bit: float = 50e-9
    big_k_bps: float | None = None
    interference_power: str = "p_max"

    def validate(self) -> None:
        errors = []
        positive = ("n_nodes", "width_m", "height_m", "arrival_rate_per_h", "lifetime_h",
                    "test_points_per_app", "n_max", "sensing_range_m", "source_rate_bps",
                    "app_memory_bytes", "app_cpu_mips", "g0", "gamma")
        for name in positive:
            if not getattr(self, name) > 0:
                errors.append(f"{name}: must be positive")
        if self.n_apps < 0:
            errors.append("n_apps: must be nonnegative")
        if self.placement not in ("grid", "random"):
            errors.append("placement: must be 'grid' or 'random'")
        if self.placement == "grid" and math.isqrt(self.n_nodes) ** 2 != self.n_nodes:
            errors.append(f"n_nodes: grid placement needs a square count, got {self.n_nodes}")
        if self.sink_indices is not None:
            if any(not 0 <= s < self.n_nodes for s in self.sink_indices):
                errors.append("sink_indices: index out of range")
            if len(set(self.sink_indices)) != len(self.sink_indices):
                errors.append("sink_indices: duplicate index")
        elif not 0 <= self.n_sinks <= min(4, self.n_nodes):
            errors.append("n_sinks: default sink placement supports 0..4 sinks")
        if self.interference_power not in INTERFERENCE_MODES:
            errors.append(f"interference_power: must be one of {INTERFERENCE_MODES}")
        if errors:
            raise ValueError("invalid generator config:\n  " + "\n  ".join(errors))

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GeneratorConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown generator config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "GeneratorConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def radio(self) -> RadioModel:
        return RadioModel(
            g0=self.g0, gamma=self.gamma, p_max=dbm_to_watts(self.p_max_dbm),
            alpha=dbm_to_watts(self.alpha_dbm), beta=dbm_to_watts(self.beta_dbm),
            beta1=self.beta1_j_per_bit, beta2=self.beta2_j_per_bit_per_m_gamma,
            rho=self.rho_j_per_bit,
        )


def _place_nodes(cfg: GeneratorConfig, rng: np.random.Generator) -> list[tuple[float, float]]:
    if cfg.placement == "grid":
        side = math.isqrt(cfg.n_nodes)
        xs = np.linspace(0.0, cfg.width_m, side) if side > 1 else np.array([cfg.width_m / 2])
        ys = np.linspace(0.0, cfg.height_m, side) if side > 1 else np.array([cfg.height_m / 2])
        return [(float(x), float(y)) for y in ys for x in xs]
    pts = rng.uniform((0.0, 0.0), (cfg.width_m, cfg.height_m), size=(cfg.n_nodes, 2))
    return [(float(x), float(y)) for x, y in pts]


def _default_sinks(cfg: GeneratorConfig, positions: list[tuple[float, float]]) -> list[int]:
    w, h = cfg.width_m, cfg.height_m
    anchors = [(w / 4, h / 4), (3 * w / 4, 3 * h / 4), (3 * w / 4, h / 4), (w / 4, 3 * h / 4)]
    chosen: list[int] = []
    for ax, ay in anchors[: cfg.n_sinks]:
        order = sorted(
            (math.hypot(px - ax, py - ay), idx)
            for idx, (px, py) in enumerate(positions) if idx not in chosen
        )
        chosen.append(order[0][1])
    return chosen


def generate_instance(cfg: GeneratorConfig, seed: int) -> Scenario:
    cfg.validate()
    rng = np.random.default_rng(seed)
    positions = _place_nodes(cfg, rng)
    sinks = set(cfg.sink_indices if cfg.sink_indices is not None else _default_sinks(cfg, positions))
    nodes = tuple(
        SensorNode(
            id=i, position=p, bandwidth=cfg.bandwidth_bps, memory=cfg.memory_bytes,
            cpu=cfg.cpu_mips, initial_energy=cfg.energy_j, is_sink=i in sinks,
        )
        for i, p in enumerate(positions)
    )

    rate_per_s = cfg.arrival_rate_per_h / 3600.0
    arrivals = np.cumsum(rng.exponential(1.0 / rate_per_s, size=cfg.n_apps))
    tp_coords = rng.uniform((0.0, 0.0), (cfg.width_m, cfg.height_m),
                            size=(cfg.n_apps * cfg.test_points_per_app, 2))
    test_points = tuple((float(x), float(y)) for x, y in tp_coords)
    per = cfg.test_points_per_app
    apps = tuple(
        Application(
            id=j, arrival_time=float(arrivals[j]), lifetime=cfg.lifetime_h * 3600.0,
            test_points=tuple(range(j * per, (j + 1) * per)), source_rate=cfg.source_rate_bps,
            memory=cfg.app_memory_bytes, cpu_load=cfg.app_cpu_mips, proc_power=cfg.proc_power_w,
        )
        for j in range(cfg.n_apps)
    )
    scenario = Scenario(
        nodes=nodes, test_points=test_points, applications=apps,
        width=cfg.width_m, height=cfg.height_m, sensing_range=cfg.sensing_range_m,
        n_max=cfg.n_max, activation_cost=cfg.activation_cost_j,
        movement_cost=cfg.movement_cost_j, radio=cfg.radio(), big_k=cfg.big_k_bps,
        interference_power=cfg.interference_power,
    )
    warn_if_disconnected(scenario)
    return scenario


def isolated_nodes(scenario: Scenario) -> list[int]:
    """Non-sink nodes without any viable link."""
    n = len(scenario.nodes)
    return [
        i for i in scenario.non_sinks
        if not any(link_viable(scenario, i, h) for h in range(n) if h != i)
    ]


def warn_if_disconnected(scenario: Scenario) -> None:
    lonely = isolated_nodes(scenario)
    if lonely:
        warnings.warn(
            f"nodes {lonely} have no neighbour within the transmission range "
            f"({scenario.tx_range:.2f} m)",
            ConnectivityWarning,
            stacklevel=2,
        )
