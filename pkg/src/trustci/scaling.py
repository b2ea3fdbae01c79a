"""Cost of trust as the consumer base grows.

Untrusted model: every consumer rebuilds, tests and audits every release.
Trusted model: the producer runs the attested pipeline once per release and
each consumer only verifies the newest release's evidence.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

METRICS = ("time", "cpu", "memory")


@dataclass(frozen=True)
class CostRow:
    """Per-run cost of one use case without and with the trust mechanisms."""

    use_case: str
    workflow_time_min: tuple[float, float]
    cpu_s: tuple[float, float]
    mem_unit_s: tuple[float, float]
    verify_cost_ms: int = 80

    def __post_init__(self):
        for pair in (self.workflow_time_min, self.cpu_s, self.mem_unit_s):
            if len(pair) != 2 or min(pair) <= 0:
                raise ValueError(f"{self.use_case}: costs must be positive (without, with) pairs")
        if self.verify_cost_ms <= 0:
            raise ValueError(f"{self.use_case}: verify cost must be positive")

    def costs(self, metric: str) -> tuple[float, float, float]:
        """(without, with, per-verification) in the metric's unit."""
        if metric == "time":
            return (*self.workflow_time_min, self.verify_cost_ms / 60_000)
        if metric == "cpu":
            return (*self.cpu_s, self.verify_cost_ms / 1000)
        if metric == "memory":
            # signature checks hold no meaningful resident memory over time
            return (*self.mem_unit_s, 0.0)
        raise ValueError(f"unknown metric {metric!r}")


# Measured means from the reference deployment: minutes, CPU seconds,
# seconds x 100 MiB, and milliseconds per cryptographic operation.
COST_TABLE = {
    "oracle-core": CostRow("oracle-core", (3.32, 6.00), (21.60, 39.20), (4.80, 9.60), 80),
    "frontend-interface": CostRow("frontend-interface", (4.98, 9.00), (32.40, 58.80),
                                  (7.20, 14.40), 80),
    "backend-service": CostRow("backend-service", (9.13, 16.50), (59.40, 107.80),
                               (13.20, 26.40), 80),
}


def load_cost_table(path) -> dict[str, CostRow]:
    doc = json.loads(Path(path).read_text())
    table = {}
    for name, row in doc.items():
        table[name] = CostRow(
            name,
            tuple(float(v) for v in row["workflow_time_min"]),
            tuple(float(v) for v in row["cpu_s"]),
            tuple(float(v) for v in row["mem_unit_s"]),
            int(row.get("verify_cost_ms", 80)),
        )
    return table


@dataclass(frozen=True)
class ScalingScenario:
    months: int
    consumer_growth_per_month: int
    releases_per_month: int
    cost: CostRow
    metric: str = "time"
    verify_back_catalog: bool = False

    def __post_init__(self):
        if self.months < 1:
            raise ValueError("months must be >= 1")
        if self.consumer_growth_per_month < 0 or self.releases_per_month < 0:
            raise ValueError("growth and release rates must be non-negative")


@dataclass
class CostCurves:
    month: np.ndarray
    consumers: np.ndarray
    untrusted_monthly: np.ndarray
    trusted_monthly: np.ndarray
    producer_monthly: np.ndarray
    untrusted_cumulative: np.ndarray
    trusted_cumulative: np.ndarray
    producer_cumulative: np.ndarray
    crossover_month: Optional[int]
    metric: str = "time"

    def rows(self) -> list[dict]:
        out = []
        for i in range(len(self.month)):
            out.append({
                "month": int(self.month[i]),
                "consumers": int(self.consumers[i]),
                "untrusted_monthly": float(self.untrusted_monthly[i]),
                "trusted_monthly": float(self.trusted_monthly[i]),
                "producer_monthly": float(self.producer_monthly[i]),
                "untrusted_cumulative": float(self.untrusted_cumulative[i]),
                "trusted_cumulative": float(self.trusted_cumulative[i]),
                "producer_cumulative": float(self.producer_cumulative[i]),
            })
        return out

    def to_csv(self, path) -> None:
        rows = self.rows()
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            for row in rows:
                writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})

    def plot_svg(self, path, title: str = "") -> None:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(self.month, self.untrusted_cumulative, marker="o", label="untrusted (consumer rebuilds)")
        ax.plot(self.month, self.trusted_cumulative, marker="s", label="trusted (producer + verify)")
        ax.plot(self.month, self.producer_cumulative, linestyle="--", label="producer overhead")
        ax.set_xlabel("month")
        ax.set_ylabel({"time": "cumulative minutes", "cpu": "cumulative CPU s",
                       "memory": "cumulative s x 100 MiB"}[self.metric])
        if title:
            ax.set_title(title)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg")
        plt.close(fig)


def simulate_scaling(s: ScalingScenario) -> CostCurves:
    c_without, c_with, c_verify = s.cost.costs(s.metric)
    month = np.arange(1, s.months + 1)
    consumers = s.consumer_growth_per_month * month
    releases = s.releases_per_month
    untrusted = consumers * releases * c_without
    producer = np.full(s.months, releases * c_with, dtype=float)
    verified = month * releases if s.verify_back_catalog else np.ones(s.months, dtype=int)
    trusted = producer + consumers * verified * c_verify
    ucum, tcum = np.cumsum(untrusted), np.cumsum(trusted)
    ahead = np.nonzero(tcum < ucum)[0]
    return CostCurves(
        month=month,
        consumers=consumers,
        untrusted_monthly=untrusted.astype(float),
        trusted_monthly=trusted,
        producer_monthly=producer,
        untrusted_cumulative=ucum.astype(float),
        trusted_cumulative=tcum,
        producer_cumulative=np.cumsum(producer),
        crossover_month=int(month[ahead[0]]) if len(ahead) else None,
        metric=s.metric,
    )
