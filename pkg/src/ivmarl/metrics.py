"""Evaluation aggregates plus their CSV and chart serializations.

CSV files are byte-stable: fixed header, floats at six decimals, LF line
endings.  Charts are SVG line plots rendered through matplotlib with a fixed
hash salt and no timestamp metadata, so identical inputs give identical
bytes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .env import WON, WorldState  # noqa: E402

CSV_HEADER = ("step,battle_won_mean,dead_allies_mean,dead_enemies_mean,"
              "mean_innate_return,n_episodes")

METRIC_NAMES = ("battle_won_mean", "dead_allies_mean", "dead_enemies_mean",
                "mean_innate_return")

# chart rendering must be reproducible byte-for-byte
matplotlib.rcParams["svg.hashsalt"] = "ivmarl"

_CHART_COLORS = {"coward": "tab:blue", "neutral": "tab:green",
                 "reckless": "tab:red"}
SMOOTH_WINDOW = 32


@dataclass(frozen=True)
class MetricsRecord:
    step: int
    battle_won_mean: float
    dead_allies_mean: float
    dead_enemies_mean: float
    mean_innate_return: float
    n_episodes: int

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("step must be non-negative")
        if self.n_episodes < 1:
            raise ValueError("n_episodes must be >= 1")
        if not 0.0 <= self.battle_won_mean <= 1.0:
            raise ValueError("battle_won_mean outside [0, 1]")
        if self.dead_allies_mean < 0 or self.dead_enemies_mean < 0:
            raise ValueError("dead-unit means must be non-negative")


def aggregate(step: int, outcomes, terminal_states, agent_returns,
              ) -> MetricsRecord:
    """Plain arithmetic means over evaluation episodes.

    Dead-unit counts come from the terminal world states; the innate return
    averages over both episodes and agents.  Sums happen before any division,
    so episode order cannot change the result.
    """
    outcomes = list(outcomes)
    terminal_states = list(terminal_states)
    agent_returns = list(agent_returns)
    if not outcomes:
        raise ValueError("no episodes to aggregate")
    if len(terminal_states) != len(outcomes) or len(agent_returns) != len(outcomes):
        raise ValueError("outcome, state, and return lists must align")
    n = len(outcomes)
    wins = sum(1 for o in outcomes if o == WON)
    dead_allies = sum(sum(1 for u in s.ally_units if not u.alive)
                      for s in terminal_states)
    dead_enemies = sum(sum(1 for u in s.enemy_units if not u.alive)
                       for s in terminal_states)
    total_return = math.fsum(r for ep in agent_returns for r in ep)
    n_values = sum(len(ep) for ep in agent_returns)
    return MetricsRecord(
        step=step,
        battle_won_mean=wins / n,
        dead_allies_mean=dead_allies / n,
        dead_enemies_mean=dead_enemies / n,
        mean_innate_return=total_return / n_values,
        n_episodes=n,
    )


def csv_row(record: MetricsRecord) -> str:
    return (f"{record.step},{record.battle_won_mean:.6f},"
            f"{record.dead_allies_mean:.6f},{record.dead_enemies_mean:.6f},"
            f"{record.mean_innate_return:.6f},{record.n_episodes}")


def write_csv(records, path: str) -> None:
    lines = [CSV_HEADER]
    lines.extend(csv_row(r) for r in records)
    Path(path).write_text("\n".join(lines) + "\n", newline="")


def read_csv(path: str) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER.split(","):
            raise ValueError(f"{path}: unexpected CSV header")
        return [MetricsRecord(
            step=int(row["step"]),
            battle_won_mean=float(row["battle_won_mean"]),
            dead_allies_mean=float(row["dead_allies_mean"]),
            dead_enemies_mean=float(row["dead_enemies_mean"]),
            mean_innate_return=float(row["mean_innate_return"]),
            n_episodes=int(row["n_episodes"]),
        ) for row in reader]


def _moving_average(values, window: int):
    out = []
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        out.append(math.fsum(values[lo:i + 1]) / (i + 1 - lo))
    return out


def render_chart(series: dict[str, list[MetricsRecord]], metric: str,
                 path: str, title: str | None = None,
                 smooth: bool = False) -> None:
    """One line per personality for the chosen metric, written as SVG.

    Stored records stay raw; the optional trailing moving average (window
    32) is applied at render time only.
    """
    if metric not in METRIC_NAMES:
        raise ValueError(f"unknown metric {metric!r}")
    if not series:
        raise ValueError("no series to plot")
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    try:
        for label in sorted(series):
            records = series[label]
            steps = [r.step for r in records]
            values = [getattr(r, metric) for r in records]
            if smooth:
                values = _moving_average(values, SMOOTH_WINDOW)
            ax.plot(steps, values, label=label,
                    color=_CHART_COLORS.get(label))
        ax.set_xlabel("environment steps")
        ax.set_ylabel(metric)
        if title:
            ax.set_title(title)
        ax.legend()
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
