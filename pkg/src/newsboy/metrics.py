"""Fulfilment Index and Utilization Index.

Both indices count units.  At cluster level they are ratios of unit totals,
never averages of per-SKU ratios.  A zero denominator yields ``None``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

from .errors import DataError


@dataclass(frozen=True)
class WeekOutcome:
    cluster_id: str
    sku_id: str
    ordered_units: int
    allocated_units: int
    prev_week_sold_units: int

    def __post_init__(self):
        for name in ("ordered_units", "allocated_units", "prev_week_sold_units"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be >= 0 for ({self.cluster_id}, {self.sku_id})")

    @property
    def delivered_units(self) -> int:
        return min(self.allocated_units, self.ordered_units)


@dataclass(frozen=True)
class ClusterMetrics:
    cluster_id: str
    fi: float | None
    ui: float | None
    delivered_total: int = 0
    ordered_total: int = 0
    predicted_total: int = 0
    prev_sold_total: int = 0


def sku_fi(outcome: WeekOutcome) -> float | None:
    if outcome.ordered_units == 0:
        return None
    return outcome.delivered_units / outcome.ordered_units


def sku_ui(outcome: WeekOutcome) -> float | None:
    if outcome.prev_week_sold_units == 0:
        return None
    return outcome.allocated_units / outcome.prev_week_sold_units


def cluster_metrics(outcomes: Iterable[WeekOutcome], cluster_id: str | None = None) -> ClusterMetrics:
    """Aggregate one cluster-week of SKU outcomes.

    ``cluster_id`` names the cluster when ``outcomes`` is empty; otherwise it
    must agree with every outcome.
    """
    delivered = ordered = predicted = prev_sold = 0
    for o in outcomes:
        if cluster_id is None:
            cluster_id = o.cluster_id
        elif o.cluster_id != cluster_id:
            raise DataError(f"mixed clusters in one aggregate: {cluster_id!r} and {o.cluster_id!r}")
        delivered += o.delivered_units
        ordered += o.ordered_units
        predicted += o.allocated_units
        prev_sold += o.prev_week_sold_units
    return ClusterMetrics(
        cluster_id=cluster_id or "",
        fi=delivered / ordered if ordered else None,
        ui=predicted / prev_sold if prev_sold else None,
        delivered_total=delivered,
        ordered_total=ordered,
        predicted_total=predicted,
        prev_sold_total=prev_sold,
    )
