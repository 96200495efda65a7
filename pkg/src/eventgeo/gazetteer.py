"""Offline gazetteer, toponym extraction and cached geocoding."""

from __future__ import annotations

import json
import logging
import math
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence
from urllib.parse import quote

import httpx

from eventgeo.ingest import Message, NameMatcher, tokenize

logger = logging.getLogger(__name__)

LEVELS = ("province", "city", "district", "township", "village", "road")
_LEVEL_RANK = {name: i for i, name in enumerate(LEVELS)}


class GazetteerError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinate ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0 or not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"coordinate out of range ({self.lat}, {self.lon})")


@dataclass(frozen=True)
class HierarchyChain:
    """Administrative chain, coarse to fine; absent levels are skipped."""

    levels: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        ranks = []
        for level, name in self.levels:
            if level not in _LEVEL_RANK:
                raise ValueError(f"unknown hierarchy level {level!r}")
            if not name:
                raise ValueError(f"empty name at level {level!r}")
            ranks.append(_LEVEL_RANK[level])
        if any(a >= b for a, b in zip(ranks, ranks[1:])):
            raise ValueError("hierarchy levels must be strictly ordered coarse to fine")

    @classmethod
    def from_mapping(cls, mapping: dict | None) -> HierarchyChain:
        mapping = mapping or {}
        unknown = set(mapping) - set(LEVELS)
        if unknown:
            raise ValueError(f"unknown hierarchy level(s): {sorted(unknown)}")
        return cls(tuple((lv, str(mapping[lv])) for lv in LEVELS if mapping.get(lv) is not None))

    def as_dict(self) -> dict[str, str]:
        return dict(self.levels)

    def get(self, level: str) -> str | None:
        for lv, name in self.levels:
            if lv == level:
                return name
        return None

    def names(self) -> list[str]:
        return [name for _, name in self.levels]

    def __bool__(self) -> bool:
        return bool(self.levels)


@dataclass(frozen=True)
class GazetteerEntry:
    canonical_name: str
    aliases: frozenset[str]
    chain: HierarchyChain
    coord: GeoPoint

    def __post_init__(self):
        if self.canonical_name in self.aliases:
            raise ValueError(f"{self.canonical_name!r} listed among its own aliases")


@dataclass(frozen=True)
class ToponymMention:
    surface: str
    message_id: str
    entry: GazetteerEntry | None = None

    def __post_init__(self):
        if not self.surface:
            raise ValueError("empty toponym surface")

    @property
    def resolved(self) -> bool:
        return self.entry is not None


def address_key(text: str) -> str:
    """Whitespace-free, casefolded form used for structured address lookup."""
    return "".join(text.split()).casefold()


class Gazetteer:
    """Immutable name index over gazetteer entries.

    Exact lookups go through canonical names and aliases. A second index keys
    every entry by its concatenated hierarchy ("Henan Zhengzhou Jinshui
    District"), which stands in for a map service's structured address
    search when validating generated pseudo-toponyms.
    """

    def __init__(self, entries: Iterable[GazetteerEntry] = ()):
        self.entries: tuple[GazetteerEntry, ...] = tuple(entries)
        self._by_name: dict[str, GazetteerEntry] = {}
        self._by_address: dict[str, GazetteerEntry] = {}
        for entry in self.entries:
            for name in (entry.canonical_name, *sorted(entry.aliases)):
                prior = self._by_name.get(name)
                if prior is None:
                    self._by_name[name] = entry
                elif prior is not entry:
                    logger.warning("duplicate gazetteer name %r; keeping %r", name, prior.canonical_name)
            if entry.chain:
                self._by_address.setdefault(address_key("".join(entry.chain.names())), entry)

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, name: str) -> GazetteerEntry | None:
        return self._by_name.get(name)

    def resolve_address(self, text: str) -> GazetteerEntry | None:
        return self._by_address.get(address_key(text))

    def names(self) -> frozenset[str]:
        return frozenset(self._by_name)

    @cached_property
    def matcher(self) -> NameMatcher:
        return NameMatcher(self._by_name)


def _parse_entry(rec: dict, line: int) -> GazetteerEntry:
    if not isinstance(rec, dict):
        raise GazetteerError("entry is not an object", line)
    name = rec.get("name")
    if not isinstance(name, str) or not name:
        raise GazetteerError("missing or empty 'name'", line)
    aliases = rec.get("aliases") or []
    if not isinstance(aliases, list) or not all(isinstance(a, str) and a for a in aliases):
        raise GazetteerError("'aliases' must be a list of non-empty strings", line)
    chain_raw = rec.get("chain") or {}
    if not isinstance(chain_raw, dict):
        raise GazetteerError("'chain' must be an object", line)
    try:
        chain = HierarchyChain.from_mapping(chain_raw)
        coord = GeoPoint(float(rec["lat"]), float(rec["lon"]))
        return GazetteerEntry(name, frozenset(a for a in aliases if a != name), chain, coord)
    except KeyError as exc:
        raise GazetteerError(f"missing field {exc.args[0]!r}", line) from None
    except (TypeError, ValueError) as exc:
        raise GazetteerError(str(exc), line) from None


def load_gazetteer(path: str | Path) -> Gazetteer:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise GazetteerError(f"invalid JSON: {exc.msg}", lineno) from None
            entries.append(_parse_entry(rec, lineno))
    return Gazetteer(entries)


def default_gazetteer_path() -> Path:
    """Path of the small curated gazetteer shipped with the package."""
    return Path(__file__).parent / "data" / "test_gazetteer.jsonl"


# ── Extraction ──────────────────────────────────────────

# An extractor maps a message to the toponym surfaces it contains, in order.
Extractor = Callable[[Message], Sequence[str]]


def extract_toponyms(
    cluster_messages: Iterable[Message],
    g: Gazetteer,
    extractor: Extractor | None = None,
    resolver: Callable[[str], GazetteerEntry | None] | None = None,
) -> list[ToponymMention]:
    """One mention per toponym occurrence, resolved where possible.

    By default surfaces are the message tokens that are gazetteer names;
    an external NER can be plugged in via ``extractor``. Surfaces that do
    not occur verbatim in the message text are dropped.
    """
    resolve = resolver or g.resolve
    mentions = []
    for msg in cluster_messages:
        if extractor is None:
            surfaces = [t for t in tokenize(msg, g) if g.resolve(t) is not None]
        else:
            surfaces = list(extractor(msg))
        for surface in surfaces:
            if not surface or surface not in msg.text:
                continue
            mentions.append(ToponymMention(surface, msg.id, resolve(surface)))
    return mentions


# ── Geocoding ───────────────────────────────────────────


class GeocodeCache:
    """Append-only JSONL cache of remote geocoding results.

    With ``path=None`` the cache lives in memory only.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._data: dict[str, tuple[GeoPoint, HierarchyChain]] = {}
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                if not raw.strip():
                    continue
                try:
                    rec = json.loads(raw)
                    value = (GeoPoint(float(rec["lat"]), float(rec["lon"])), HierarchyChain.from_mapping(rec.get("chain")))
                except (ValueError, KeyError, TypeError) as exc:
                    logger.warning("skipping bad cache line %d in %s: %s", lineno, self.path, exc)
                    continue
                self._data[rec["name"]] = value

    def get(self, name: str) -> tuple[GeoPoint, HierarchyChain] | None:
        with self._lock:
            return self._data.get(name)

    def put(self, name: str, point: GeoPoint, chain: HierarchyChain) -> None:
        with self._lock:
            if name in self._data:
                return
            self._data[name] = (point, chain)
            if self.path is None:
                return
            rec = {
                "name": name,
                "lat": point.lat,
                "lon": point.lon,
                "chain": chain.as_dict(),
                "ts": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
            }
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self._data)


class RateLimiter:
    def __init__(self, rate_per_sec: float):
        self.min_interval = 1.0 / rate_per_sec if rate_per_sec > 0 else 0.0
        self._lock = threading.Lock()
        self._next = 0.0

    def wait(self) -> None:
        with self._lock:
            now = time.monotonic()
            delay = self._next - now
            self._next = max(now, self._next) + self.min_interval
        if delay > 0:
            time.sleep(delay)


def _dig(obj, path: str):
    for part in path.split("."):
        if isinstance(obj, list):
            obj = obj[int(part)]
        else:
            obj = obj[part]
    return obj


@dataclass
class RemoteGeocoderConfig:
    url_template: str
    api_key_env: str | None = None
    lat_path: str = "lat"
    lon_path: str = "lon"
    chain_path: str | None = "chain"
    rate_per_sec: float = 5.0
    retries: int = 3
    backoff_base: float = 0.5
    timeout: float = 10.0

    @classmethod
    def from_dict(cls, data: dict) -> RemoteGeocoderConfig:
        return cls(**data)


class HttpGeocoder:
    """Generic JSON-over-HTTP geocoder.

    The endpoint is a URL template with ``{name}`` (and optionally ``{key}``)
    placeholders; coordinates and hierarchy are read from dotted paths in the
    response body. Transport failures are retried with exponential backoff and
    finally reported as ``None``.
    """

    def __init__(self, config: RemoteGeocoderConfig, client: httpx.Client | None = None, sleep=time.sleep):
        self.config = config
        self.client = client or httpx.Client(timeout=config.timeout)
        self.limiter = RateLimiter(config.rate_per_sec)
        self._sleep = sleep
        self.requests_made = 0

    def _url(self, name: str) -> str:
        key = os.environ.get(self.config.api_key_env, "") if self.config.api_key_env else ""
        return self.config.url_template.format(name=quote(name, safe=""), key=quote(key, safe=""))

    def __call__(self, name: str) -> tuple[GeoPoint, HierarchyChain] | None:
        cfg = self.config
        for attempt in range(cfg.retries + 1):
            self.limiter.wait()
            self.requests_made += 1
            try:
                resp = self.client.get(self._url(name))
                if resp.status_code == 404:
                    return None
                resp.raise_for_status()
                body = resp.json()
            except (httpx.HTTPError, ValueError) as exc:
                logger.warning("geocoder request for %r failed (attempt %d): %s", name, attempt + 1, exc)
                if attempt < cfg.retries:
                    self._sleep(cfg.backoff_base * 2**attempt)
                continue
            try:
                point = GeoPoint(float(_dig(body, cfg.lat_path)), float(_dig(body, cfg.lon_path)))
                chain = HierarchyChain.from_mapping(_dig(body, cfg.chain_path)) if cfg.chain_path else HierarchyChain()
            except (KeyError, IndexError, TypeError, ValueError) as exc:
                logger.warning("geocoder response for %r unusable: %s", name, exc)
                return None
            return point, chain
        return None


def geocode(
    name: str,
    g: Gazetteer,
    remote: Callable[[str], tuple[GeoPoint, HierarchyChain] | None] | None = None,
    cache: GeocodeCache | None = None,
) -> tuple[GeoPoint, HierarchyChain] | None:
    """Look ``name`` up in the gazetteer, then the cache, then ``remote``."""
    entry = g.resolve(name) or g.resolve_address(name)
    if entry is not None:
        return entry.coord, entry.chain
    if cache is not None:
        hit = cache.get(name)
        if hit is not None:
            return hit
    if remote is None:
        return None
    try:
        result = remote(name)
    except Exception as exc:  # noqa: BLE001 - remote failures never abort the pipeline
        logger.warning("remote geocoder raised for %r: %s", name, exc)
        return None
    if result is not None and cache is not None:
        cache.put(name, *result)
    return result


@dataclass
class Geocoder:
    """Gazetteer + cache + optional remote service bundled as one callable."""

    gazetteer: Gazetteer
    remote: Callable[[str], tuple[GeoPoint, HierarchyChain] | None] | None = None
    cache: GeocodeCache = field(default_factory=GeocodeCache)

    def __call__(self, name: str) -> tuple[GeoPoint, HierarchyChain] | None:
        return geocode(name, self.gazetteer, self.remote, self.cache)

    def resolve_entry(self, name: str) -> GazetteerEntry | None:
        """Geocode ``name`` and wrap the result as a gazetteer entry."""
        entry = self.gazetteer.resolve(name) or self.gazetteer.resolve_address(name)
        if entry is not None:
            return entry
        hit = self(name)
        if hit is None:
            return None
        return GazetteerEntry(name, frozenset(), hit[1], hit[0])
