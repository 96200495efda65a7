"""Geolocation error metrics: great-circle error, mean/median error, ACC@d."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from eventgeo.gazetteer import GeoPoint

EARTH_RADIUS_KM = 6371.0
DEFAULT_THRESHOLDS_KM = (100.0, 200.0, 300.0, 400.0)


class EvaluationError(ValueError):
    pass


def haversine(a: GeoPoint, b: GeoPoint, radius_km: float = EARTH_RADIUS_KM) -> float:
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2.0 * radius_km * math.asin(math.sqrt(min(1.0, h)))


@dataclass
class EvalReport:
    per_event: list[tuple[str, float]]
    mean_km: float
    median_km: float
    acc: dict[float, float] = field(default_factory=dict)
    n_events: int = 0
    n_unlocatable: int = 0
    unlocatable: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_events": self.n_events,
            "n_unlocatable": self.n_unlocatable,
            "mean_km": None if math.isnan(self.mean_km) else self.mean_km,
            "median_km": None if math.isnan(self.median_km) else self.median_km,
            "acc": {f"{d:g}": v for d, v in sorted(self.acc.items())},
            "per_event": [{"event_id": e, "error_km": err} for e, err in self.per_event],
            "unlocatable": self.unlocatable,
        }


def _errors(estimates: Mapping[str, GeoPoint | None], truths: Mapping[str, GeoPoint]):
    if not truths:
        raise EvaluationError("no ground-truth events")
    shared = [e for e in sorted(truths) if estimates.get(e) is not None]
    if not shared and not (set(estimates) & set(truths)):
        raise EvaluationError("estimate and truth event ids are disjoint")
    errors = [(e, haversine(estimates[e], truths[e])) for e in shared]
    unlocatable = [e for e in sorted(truths) if estimates.get(e) is None]
    return errors, unlocatable


def lower_median(values: Sequence[float]) -> float:
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def error_stats(estimates: Mapping[str, GeoPoint | None], truths: Mapping[str, GeoPoint]) -> EvalReport:
    """Mean and lower-median error over located events.

    Truth events with no estimate (missing or ``None``) are unlocatable:
    they are counted but contribute no error.
    """
    errors, unlocatable = _errors(estimates, truths)
    values = [err for _, err in errors]
    return EvalReport(
        per_event=errors,
        mean_km=sum(values) / len(values) if values else math.nan,
        median_km=lower_median(values) if values else math.nan,
        n_events=len(truths),
        n_unlocatable=len(unlocatable),
        unlocatable=unlocatable,
    )


def acc_at(estimates: Mapping[str, GeoPoint | None], truths: Mapping[str, GeoPoint], d: float) -> float:
    """Share of all truth events located within ``d`` km."""
    if d < 0:
        raise ValueError("threshold must be non-negative")
    errors, _ = _errors(estimates, truths)
    return sum(1 for _, err in errors if err <= d) / len(truths)


def evaluate(
    estimates: Mapping[str, GeoPoint | None],
    truths: Mapping[str, GeoPoint],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS_KM,
) -> EvalReport:
    report = error_stats(estimates, truths)
    located = [err for _, err in report.per_event]
    report.acc = {float(d): sum(1 for err in located if err <= d) / report.n_events for d in sorted(thresholds)}
    return report
