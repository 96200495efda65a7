"""Event geolocation from clustered messages.

Per event: extract toponyms, vote a level-wise representative chain,
drop mentions whose hierarchy contradicts the chain, add a generated
fine-grained pseudo-toponym when it validates, and average the
coordinates of what remains.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from eventgeo.gazetteer import (
    LEVELS,
    Extractor,
    GazetteerEntry,
    Geocoder,
    GeoPoint,
    HierarchyChain,
    ToponymMention,
    extract_toponyms,
)
from eventgeo.ingest import Message

FINE_LEVELS = ("district", "township", "village", "road")
PSEUDO_SOURCE = "<pseudo>"


class UnlocatableError(ValueError):
    """No resolved toponym is left to place the event."""


@dataclass(frozen=True)
class GeolocationConfig:
    match_depth: int = 2
    enable_fit: bool = True
    enable_hist: bool = True
    min_resolved_mentions: int = 1

    def __post_init__(self):
        if not 1 <= self.match_depth <= len(LEVELS):
            raise ValueError(f"match_depth must be within 1..{len(LEVELS)}")
        if self.min_resolved_mentions < 1:
            raise ValueError("min_resolved_mentions must be >= 1")


@dataclass(frozen=True)
class ToponymChain:
    """Most frequent name per hierarchy level, with its vote count."""

    representatives: dict[str, tuple[str, int]] = field(default_factory=dict)

    def get(self, level: str) -> str | None:
        rep = self.representatives.get(level)
        return rep[0] if rep else None

    def as_dict(self) -> dict[str, str]:
        return {lv: self.representatives[lv][0] for lv in LEVELS if lv in self.representatives}


def build_chain(mentions: Sequence[ToponymMention], min_resolved: int = 1) -> ToponymChain:
    resolved = [m for m in mentions if m.entry is not None]
    if len(resolved) < min_resolved or not resolved:
        raise UnlocatableError(f"unlocatable cluster: {len(resolved)} resolved mention(s)")
    tallies: dict[str, Counter] = {lv: Counter() for lv in LEVELS}
    for m in resolved:
        for level, name in m.entry.chain.levels:
            tallies[level][name] += 1
    reps = {}
    for level in LEVELS:
        if tallies[level]:
            name, count = min(tallies[level].items(), key=lambda kv: (-kv[1], kv[0]))
            reps[level] = (name, count)
    return ToponymChain(reps)


def chain_agrees(chain: HierarchyChain, cluster: ToponymChain, depth: int) -> bool:
    """True when no level among the first ``depth`` present in both disagrees."""
    for level in LEVELS[:depth]:
        mine, theirs = chain.get(level), cluster.get(level)
        if mine is not None and theirs is not None and mine != theirs:
            return False
    return True


def hist_filter(
    mentions: Sequence[ToponymMention],
    chain: ToponymChain,
    cfg: GeolocationConfig = GeolocationConfig(),
) -> list[ToponymMention]:
    """Keep resolved mentions consistent with the cluster chain, in order."""
    return [m for m in mentions if m.entry is not None and chain_agrees(m.entry.chain, chain, cfg.match_depth)]


def pseudo_toponym_candidate(chain: ToponymChain) -> str | None:
    fine = [chain.get(lv) for lv in FINE_LEVELS if chain.get(lv)]
    if not fine:
        return None
    coarse = [chain.get(lv) for lv in ("province", "city") if chain.get(lv)]
    return " ".join(coarse + fine)


def fit_generate(
    chain: ToponymChain,
    geocoder: Geocoder | Callable[[str], GazetteerEntry | None],
    cfg: GeolocationConfig = GeolocationConfig(),
) -> list[ToponymMention]:
    """Splice the chain's fine-level representatives into a pseudo-toponym.

    The candidate is kept only if it geocodes and its hierarchy carries the
    chain's own names on every one of the first ``match_depth`` levels.
    """
    candidate = pseudo_toponym_candidate(chain)
    if candidate is None:
        return []
    resolve = geocoder.resolve_entry if isinstance(geocoder, Geocoder) else geocoder
    entry = resolve(candidate)
    if entry is None:
        return []
    for level in LEVELS[: cfg.match_depth]:
        want = chain.get(level)
        if want is not None and entry.chain.get(level) != want:
            return []
    return [ToponymMention(candidate, PSEUDO_SOURCE, entry)]


def centroid(points: Sequence[GeoPoint]) -> GeoPoint:
    """Arithmetic mean of latitudes and longitudes (single-cluster k-means)."""
    if not points:
        raise ValueError("centroid of an empty point set")
    arr = np.array([(p.lat, p.lon) for p in points], dtype=np.float64)
    lat, lon = arr.mean(axis=0)
    # rounding can leave the mean a hair outside the input envelope
    lat = float(np.clip(lat, arr[:, 0].min(), arr[:, 0].max()))
    lon = float(np.clip(lon, arr[:, 1].min(), arr[:, 1].max()))
    return GeoPoint(lat, lon)


@dataclass
class EventLocation:
    event_id: str
    point: GeoPoint
    n_mentions: int
    n_filtered: int
    chain: ToponymChain
    pseudo_toponym: str | None = None

    def to_record(self) -> dict:
        rec = {
            "event_id": self.event_id,
            "lat": self.point.lat,
            "lon": self.point.lon,
            "n_mentions": self.n_mentions,
            "n_filtered": self.n_filtered,
        }
        if self.pseudo_toponym is not None:
            rec["pseudo_toponym"] = self.pseudo_toponym
        rec["chain"] = self.chain.as_dict()
        return rec


def geolocate_event(
    event_id: str,
    messages: Iterable[Message],
    geocoder: Geocoder,
    cfg: GeolocationConfig = GeolocationConfig(),
    extractor: Extractor | None = None,
) -> EventLocation:
    """Locate one event cluster; raises :class:`UnlocatableError` on failure."""
    messages = list(messages)
    if not messages:
        raise UnlocatableError("empty cluster")
    g = geocoder.gazetteer
    mentions = extract_toponyms(messages, g, extractor=extractor, resolver=geocoder.resolve_entry)
    chain = build_chain(mentions, cfg.min_resolved_mentions)

    pseudo = fit_generate(chain, geocoder, cfg) if cfg.enable_fit else []
    pool = mentions + pseudo
    if cfg.enable_hist:
        kept = hist_filter(pool, chain, cfg)
    else:
        kept = [m for m in pool if m.entry is not None]
    if not kept:
        raise UnlocatableError("no resolved toponym survived filtering")

    points = [m.entry.coord for m in kept]
    return EventLocation(
        event_id=event_id,
        point=centroid(points),
        n_mentions=len(mentions),
        n_filtered=len(pool) - len(kept),
        chain=chain,
        pseudo_toponym=pseudo[0].surface if pseudo and pseudo[0] in kept else None,
    )
