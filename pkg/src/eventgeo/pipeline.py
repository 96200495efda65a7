"""Batch pipeline: configuration, stage runners and output files."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from eventgeo.detect import EventClusterSet, TrainConfig, detect_events, dumps_checkpoint, train
from eventgeo.gazetteer import (
    GeocodeCache,
    Geocoder,
    GeoPoint,
    HttpGeocoder,
    RemoteGeocoderConfig,
    load_gazetteer,
)
from eventgeo.geoloc import EventLocation, GeolocationConfig, UnlocatableError, geolocate_event
from eventgeo.graph import FeatureConfig, build_message_graph
from eventgeo.hyperbolic import HyperbolicConfig
from eventgeo.ingest import Message, load_dataset
from eventgeo.metrics import DEFAULT_THRESHOLDS_KM, EvalReport, evaluate

logger = logging.getLogger(__name__)

CLUSTERS_FILE = "clusters.jsonl"
MODEL_FILE = "model.json"
LOSS_FILE = "loss_history.csv"
LOCATIONS_FILE = "locations.jsonl"
GEOJSON_FILE = "locations.geojson"
UNLOCATABLE_FILE = "unlocatable.jsonl"
REPORT_FILE = "report.json"


class InputError(Exception):
    """Bad or missing input; maps to exit code 2."""


def _section(cls, data: Mapping[str, Any] | None, name: str):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise InputError(f"config: unknown key(s) in {name}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"config: {name}: {exc}") from None


@dataclass
class PipelineConfig:
    dataset_path: Path
    gazetteer_path: Path
    output_dir: Path
    feature: FeatureConfig = field(default_factory=FeatureConfig)
    hyperbolic: HyperbolicConfig = field(default_factory=HyperbolicConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    geoloc: GeolocationConfig = field(default_factory=GeolocationConfig)
    eval_thresholds_km: tuple[float, ...] = DEFAULT_THRESHOLDS_KM
    remote_geocoder: RemoteGeocoderConfig | None = None
    geocode_cache: Path | None = None
    truth_path: Path | None = None
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        th = tuple(float(t) for t in self.eval_thresholds_km)
        if not th or any(t <= 0 for t in th) or list(th) != sorted(th):
            raise InputError("config: eval_thresholds_km must be positive and sorted")
        self.eval_thresholds_km = th
        if self.jobs < 1:
            raise InputError("config: jobs must be >= 1")
        self.train = replace(self.train, seed=self.seed)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base_dir: Path = Path(".")) -> PipelineConfig:
        data = dict(data)
        for key in ("dataset_path", "gazetteer_path", "output_dir"):
            if not data.get(key):
                raise InputError(f"config: missing {key}")

        def path(value):
            if value in (None, ""):
                return None
            p = Path(value)
            return p if p.is_absolute() else base_dir / p

        remote = data.get("remote_geocoder")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"config: unknown key(s): {sorted(unknown)}")
        return cls(
            dataset_path=path(data["dataset_path"]),
            gazetteer_path=path(data["gazetteer_path"]),
            output_dir=path(data["output_dir"]),
            feature=_section(FeatureConfig, data.get("feature"), "feature"),
            hyperbolic=_section(HyperbolicConfig, data.get("hyperbolic"), "hyperbolic"),
            train=_section(TrainConfig, data.get("train"), "train"),
            geoloc=_section(GeolocationConfig, data.get("geoloc"), "geoloc"),
            eval_thresholds_km=tuple(data.get("eval_thresholds_km") or DEFAULT_THRESHOLDS_KM),
            remote_geocoder=_section(RemoteGeocoderConfig, remote, "remote_geocoder") if remote else None,
            geocode_cache=path(data.get("geocode_cache")),
            truth_path=path(data.get("truth_path")),
            seed=int(data.get("seed", 0)),
            jobs=int(data.get("jobs", 1)),
        )

    @classmethod
    def load(cls, path: str | Path) -> PipelineConfig:
        path = Path(path)
        if not path.exists():
            raise InputError(f"config: not found: {path}")
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise InputError(f"config: invalid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise InputError("config: top level must be a mapping")
        return cls.from_dict(data, path.parent)


# ── File helpers ────────────────────────────────────────


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r, ensure_ascii=False, sort_keys=False) + "\n" for r in records)


def _read_jsonl(path: Path, what: str) -> list[dict]:
    if not path.exists():
        raise InputError(f"{what}: not found")
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise InputError(f"{what}: line {lineno}: invalid JSON: {exc.msg}") from None
            if not isinstance(rec, dict):
                raise InputError(f"{what}: line {lineno}: record is not an object")
            out.append(rec)
    return out


def load_inputs(cfg: PipelineConfig):
    if not cfg.gazetteer_path.exists():
        raise InputError("gazetteer: not found")
    if not cfg.dataset_path.exists():
        raise InputError("dataset: not found")
    try:
        gazetteer = load_gazetteer(cfg.gazetteer_path)
    except ValueError as exc:
        raise InputError(f"gazetteer: {exc}") from None
    try:
        messages = load_dataset(cfg.dataset_path)
    except ValueError as exc:
        raise InputError(f"dataset: {exc}") from None
    return messages, gazetteer


def make_geocoder(cfg: PipelineConfig, gazetteer) -> Geocoder:
    remote = HttpGeocoder(cfg.remote_geocoder) if cfg.remote_geocoder else None
    return Geocoder(gazetteer, remote, GeocodeCache(cfg.geocode_cache))


# ── Stages ──────────────────────────────────────────────


@dataclass
class DetectOutput:
    clusters: EventClusterSet
    loss_history: list[float]
    holdout_accuracy: float | None


def run_detect(cfg: PipelineConfig) -> DetectOutput:
    messages, gazetteer = load_inputs(cfg)
    if not messages:
        raise InputError("dataset: no messages")
    _, graph = build_message_graph(messages, cfg.feature, gazetteer)
    labels = {m.id: m.event_label for m in messages if m.event_label is not None}
    if len(set(labels.values())) < 2:
        raise InputError("dataset: training needs messages labelled with at least two events")
    result = train(graph, labels, cfg.train, cfg.hyperbolic)
    clusters = detect_events(messages, graph, result.params, cfg.hyperbolic)

    assigned = clusters.assignment()
    train_ids = set(result.train_ids)
    held = [m for m in labels if m not in train_ids]
    accuracy = sum(assigned[m] == labels[m] for m in held) / len(held) if held else None
    if accuracy is not None:
        logger.info("held-out detection accuracy %.4f over %d messages", accuracy, len(held))

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / MODEL_FILE, dumps_checkpoint(result.params, cfg.hyperbolic, cfg.train))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "loss"])
    writer.writerows((i, repr(loss)) for i, loss in enumerate(result.loss_history))
    atomic_write_text(out / LOSS_FILE, buf.getvalue())
    atomic_write_text(
        out / CLUSTERS_FILE,
        _jsonl({"event_id": e, "message_ids": ids} for e, ids in clusters.clusters.items()),
    )
    return DetectOutput(clusters, result.loss_history, accuracy)


def read_clusters(path: Path) -> EventClusterSet:
    clusters: dict[str, list[str]] = {}
    seen: set[str] = set()
    for rec in _read_jsonl(path, "clusters"):
        try:
            event, ids = str(rec["event_id"]), [str(i) for i in rec["message_ids"]]
        except (KeyError, TypeError):
            raise InputError("clusters: records need event_id and message_ids") from None
        if event in clusters:
            raise InputError(f"clusters: duplicate event {event!r}")
        if seen.intersection(ids):
            raise InputError(f"clusters: event {event!r} shares messages with another event")
        seen.update(ids)
        clusters[event] = ids
    return EventClusterSet(clusters)


def geolocate_clusters(
    clusters: EventClusterSet,
    messages: Mapping[str, Message],
    geocoder: Geocoder,
    gcfg: GeolocationConfig,
    jobs: int = 1,
) -> tuple[list[EventLocation], list[dict]]:
    def one(item):
        event, ids = item
        try:
            return geolocate_event(event, [messages[i] for i in ids], geocoder, gcfg), None
        except UnlocatableError as exc:
            return None, {"event_id": event, "reason": str(exc)}

    items = sorted(clusters.clusters.items())
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(it) for it in items]
    located = [loc for loc, _ in results if loc is not None]
    failed = [err for _, err in results if err is not None]
    return located, failed


def to_geojson(locations: Iterable[EventLocation]) -> dict:
    features = []
    for loc in locations:
        props = loc.to_record()
        features.append(
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [loc.point.lon, loc.point.lat]},
                "properties": props,
            }
        )
    return {"type": "FeatureCollection", "features": features}


def run_geolocate(cfg: PipelineConfig, clusters_path: Path | None = None) -> tuple[list[EventLocation], list[dict]]:
    messages, gazetteer = load_inputs(cfg)
    clusters = read_clusters(clusters_path or cfg.output_dir / CLUSTERS_FILE)
    by_id = {m.id: m for m in messages}
    missing = [i for ids in clusters.clusters.values() for i in ids if i not in by_id]
    if missing:
        raise InputError(f"clusters: unknown message id {missing[0]!r}")
    located, failed = geolocate_clusters(clusters, by_id, make_geocoder(cfg, gazetteer), cfg.geoloc, cfg.jobs)

    out = cfg.output_dir
    atomic_write_text(out / LOCATIONS_FILE, _jsonl(loc.to_record() for loc in located))
    atomic_write_text(out / GEOJSON_FILE, json.dumps(to_geojson(located), ensure_ascii=False, indent=1) + "\n")
    atomic_write_text(out / UNLOCATABLE_FILE, _jsonl(failed))
    return located, failed


def read_locations(path: Path) -> dict[str, GeoPoint]:
    if not path.exists():
        raise InputError("locations: not found")
    try:
        if path.suffix.lower() in (".geojson", ".json"):
            doc = json.loads(path.read_text(encoding="utf-8"))
            recs = [f["properties"] for f in doc.get("features", [])]
        else:
            recs = _read_jsonl(path, "locations")
        return {str(r["event_id"]): GeoPoint(float(r["lat"]), float(r["lon"])) for r in recs}
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"locations: malformed record: {exc}") from None


def read_truths(path: Path) -> dict[str, GeoPoint]:
    try:
        return {str(r["event_id"]): GeoPoint(float(r["lat"]), float(r["lon"])) for r in _read_jsonl(path, "truth")}
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"truth: malformed record: {exc}") from None


def truths_from_messages(messages: Iterable[Message]) -> dict[str, GeoPoint]:
    """Per-event truth: mean of the labelled messages' truth coordinates."""
    acc: dict[str, list[tuple[float, float]]] = {}
    for m in messages:
        if m.event_label is not None and m.truth_coord is not None:
            acc.setdefault(m.event_label, []).append(m.truth_coord)
    return {
        e: GeoPoint(sum(p[0] for p in pts) / len(pts), sum(p[1] for p in pts) / len(pts))
        for e, pts in sorted(acc.items())
    }


def format_report(report: EvalReport) -> str:
    lines = [
        f"events: {report.n_events}  unlocatable: {report.n_unlocatable}",
        f"mean error: {report.mean_km:.2f} km  median error: {report.median_km:.2f} km",
    ]
    for d, v in sorted(report.acc.items()):
        lines.append(f"ACC@{d:g}km: {100 * v:.2f}%")
    return "\n".join(lines) + "\n"


def run_eval(
    cfg: PipelineConfig,
    locations_path: Path | None = None,
    truth_path: Path | None = None,
    thresholds: Iterable[float] | None = None,
) -> EvalReport:
    estimates = read_locations(locations_path or cfg.output_dir / LOCATIONS_FILE)
    truth_path = truth_path or cfg.truth_path
    if truth_path is not None:
        truths = read_truths(truth_path)
    else:
        if not cfg.dataset_path.exists():
            raise InputError("dataset: not found")
        try:
            truths = truths_from_messages(load_dataset(cfg.dataset_path))
        except ValueError as exc:
            raise InputError(f"dataset: {exc}") from None
    report = evaluate(estimates, truths, tuple(thresholds) if thresholds else cfg.eval_thresholds_km)
    atomic_write_text(cfg.output_dir / REPORT_FILE, json.dumps(report.to_dict(), indent=1) + "\n")
    return report
