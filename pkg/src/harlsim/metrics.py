"""Run metrics from event streams: collisions/hour, crossing time, fuel.

Crossing time runs from the first entry into the 30 m measurement zone to
departure; vehicles still inside when the run ends are censored (excluded
from time and fuel averages). Collision events are counted once per contact
episode; re-contact after full separation counts again. The standard
deviation is the population form.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class RunMetrics:
    collision_count: int
    collisions_per_hour: float
    t_cross_mean: Optional[float]
    t_cross_std: Optional[float]
    fuel_per_vehicle: Optional[float]
    vehicle_count: int  # departed (measured) vehicles
    duration: float
    empty: bool = False

    @classmethod
    def empty_result(cls, duration: float = 0.0) -> "RunMetrics":
        return cls(0, 0.0, None, None, None, 0, duration, empty=True)


def compute_metrics(events: Sequence[dict], duration: float) -> RunMetrics:
    """Aggregate an event log; an empty log yields the explicit empty marker."""
    if not events:
        return RunMetrics.empty_result(duration)
    if duration <= 0:
        raise ValueError("duration must be positive")

    collisions = 0
    crossings: List[float] = []
    fuels: List[float] = []
    for rec in events:
        kind = rec.get("event")
        if kind == "collision":
            collisions += 1
        elif kind == "departure":
            if rec.get("t_cross") is not None:
                crossings.append(float(rec["t_cross"]))
            if rec.get("fuel") is not None:
                fuels.append(float(rec["fuel"]))

    t_mean = float(np.mean(crossings)) if crossings else None
    t_std = float(np.std(crossings)) if crossings else None  # population std
    fuel = float(np.mean(fuels)) if fuels else None
    return RunMetrics(
        collision_count=collisions,
        collisions_per_hour=collisions * 3600.0 / duration,
        t_cross_mean=t_mean,
        t_cross_std=t_std,
        fuel_per_vehicle=fuel,
        vehicle_count=len(crossings),
        duration=duration,
    )


CSV_HEADER = [
    "controller",
    "flow",
    "hv_fraction",
    "seed",
    "collisions_per_hour",
    "collision_count",
    "t_cross_mean",
    "t_cross_std",
    "fuel_per_vehicle",
    "vehicle_count",
]


def _fmt(value: Optional[float]) -> str:
    if value is None:
        return ""
    return "%.6f" % value


def metrics_csv_row(metrics: RunMetrics, controller: str, flow: float, hv_fraction: float, seed: int) -> List[str]:
    return [
        controller,
        "%.1f" % flow,
        "%.3f" % hv_fraction,
        str(seed),
        _fmt(metrics.collisions_per_hour),
        str(metrics.collision_count),
        _fmt(metrics.t_cross_mean),
        _fmt(metrics.t_cross_std),
        _fmt(metrics.fuel_per_vehicle),
        str(metrics.vehicle_count),
    ]


def write_metrics_csv(path: str, rows: Iterable[Sequence[str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(row)
