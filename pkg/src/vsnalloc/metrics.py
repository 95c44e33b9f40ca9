"""Run metrics, aggregation across seeds, CSV interchange and plots."""

from __future__ import annotations

import csv
import json
import math
import statistics
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

METRICS = ("deployed", "movements", "activations")
CSV_COLUMNS = ("policy", "delta_j", "phi_j", "metric", "mean", "stddev", "n")


@dataclass
class RunMetrics:
    policy: str
    delta: float
    phi: float
    seed: int | None
    deployed: int = 0
    rejected: int = 0
    movements: int = 0
    activations: int = 0
    energy_trace: list[tuple[float, float, float]] = field(default_factory=list)
    scenario_tag: str = ""

    def __post_init__(self):
        for name in ("deployed", "rejected", "movements", "activations"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def arrivals(self) -> int:
        return self.deployed + self.rejected

    def dumps(self) -> str:
        d = asdict(self)
        d["energy_trace"] = [list(row) for row in self.energy_trace]
        return json.dumps(d, indent=1, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RunMetrics":
        d = json.loads(text)
        d["energy_trace"] = [tuple(row) for row in d.get("energy_trace", [])]
        return cls(**d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "RunMetrics":
        return cls.loads(Path(path).read_text())


@dataclass(frozen=True)
class SummaryRow:
    policy: str
    delta: float
    phi: float
    metric: str
    mean: float
    stddev: float
    n: int


class IncompatibleRuns(ValueError):
    pass


def aggregate(runs: Iterable[RunMetrics], metrics: tuple[str, ...] = METRICS) -> list[SummaryRow]:
    """Mean and sample standard deviation per (policy, delta, phi) group.

    A group of one run reports stddev 0. Rows are sorted, so the result does
    not depend on the order of ``runs``.
    """
    groups: dict[tuple[str, float, float], list[RunMetrics]] = defaultdict(list)
    for r in runs:
        groups[r.policy, float(r.delta), float(r.phi)].append(r)
    rows = []
    for (policy, delta, phi), members in sorted(groups.items()):
        tags = {m.scenario_tag for m in members}
        if len(tags) > 1:
            raise IncompatibleRuns(f"group {policy}/{delta}/{phi} mixes scenarios {sorted(tags)}")
        members = sorted(members, key=lambda m: (m.seed is None, m.seed))
        for metric in metrics:
            vals = [float(getattr(m, metric)) for m in members]
            mean = math.fsum(vals) / len(vals)
            sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
            rows.append(SummaryRow(policy, delta, phi, metric, mean, sd, len(vals)))
    return rows


def emit_csv(summary: Iterable[SummaryRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in summary:
            w.writerow([r.policy, repr(r.delta), repr(r.phi), r.metric, repr(r.mean), repr(r.stddev), r.n])


def read_csv(path: str | Path) -> list[SummaryRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        return [
            SummaryRow(r["policy"], float(r["delta_j"]), float(r["phi_j"]), r["metric"],
                       float(r["mean"]), float(r["stddev"]), int(r["n"]))
            for r in reader
        ]


def plot_svg(summary: list[SummaryRow], path: str | Path, sweep: str = "delta") -> None:
    """Line charts of every metric against delta (or phi), one line per policy."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    metrics = sorted({r.metric for r in summary}, key=lambda m: METRICS.index(m) if m in METRICS else 99)
    fig, axes = plt.subplots(1, len(metrics), figsize=(4.5 * len(metrics), 3.6), squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        by_policy = defaultdict(list)
        for r in summary:
            if r.metric == metric:
                by_policy[r.policy].append((r.delta if sweep == "delta" else r.phi, r.mean, r.stddev))
        for policy, pts in sorted(by_policy.items()):
            pts.sort()
            ax.errorbar([p[0] for p in pts], [p[1] for p in pts], yerr=[p[2] for p in pts],
                        marker="o", capsize=3, label=policy)
        ax.set_xlabel("movement cost [J]" if sweep == "delta" else "activation cost [J]")
        ax.set_title(metric)
        ax.grid(alpha=0.3)
    axes[0][0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
