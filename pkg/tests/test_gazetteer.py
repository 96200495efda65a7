import json
import logging

import httpx
import pytest

from conftest import entry, msg
from eventgeo.gazetteer import (
    LEVELS,
    Gazetteer,
    GazetteerError,
    GeocodeCache,
    Geocoder,
    GeoPoint,
    HierarchyChain,
    HttpGeocoder,
    RemoteGeocoderConfig,
    extract_toponyms,
    geocode,
    load_gazetteer,
)

# ── types ───────────────────────────────────────────────


@pytest.mark.parametrize("lat, lon", [(90.5, 0), (-91, 0), (0, 180.1), (0, float("nan"))])
def test_geopoint_range(lat, lon):
    with pytest.raises(ValueError):
        GeoPoint(lat, lon)


def test_chain_orders_levels_coarse_to_fine():
    chain = HierarchyChain.from_mapping({"road": "R", "province": "P", "district": "D"})
    assert [lvl for lvl, _ in chain.levels] == ["province", "district", "road"]
    assert chain.get("city") is None


def test_chain_rejects_unordered_or_empty():
    with pytest.raises(ValueError):
        HierarchyChain((("city", "C"), ("province", "P")))
    with pytest.raises(ValueError):
        HierarchyChain.from_mapping({"province": ""})
    with pytest.raises(ValueError):
        HierarchyChain.from_mapping({"planet": "Earth"})


def test_levels():
    assert LEVELS == ("province", "city", "district", "township", "village", "road")


# ── loading and resolution ──────────────────────────────


def test_shipped_gazetteer_west_lake(gazetteer):
    e = gazetteer.resolve("West Lake")
    assert e.chain.as_dict() == {
        "province": "Zhejiang",
        "city": "Hangzhou",
        "district": "West Lake District",
        "township": "West Lake Street",
        "road": "Manjuelong Road",
    }
    assert gazetteer.resolve("西湖") is e


def test_alias_equals_canonical(gazetteer):
    for e in gazetteer.entries:
        for alias in e.aliases:
            assert gazetteer.resolve(alias) is gazetteer.resolve(e.canonical_name)


def test_unknown_name(gazetteer):
    assert gazetteer.resolve("Atlantis") is None
    assert gazetteer.resolve("west lake") is None


def test_empty_gazetteer(tmp_path):
    p = tmp_path / "g.jsonl"
    p.write_text("")
    g = load_gazetteer(p)
    assert len(g) == 0 and g.resolve("Henan") is None


def test_duplicate_name_first_wins(caplog):
    first = entry("Springfield", 1, 1)
    with caplog.at_level(logging.WARNING):
        g = Gazetteer([first, entry("Springfield", 2, 2)])
    assert g.resolve("Springfield") is first
    assert "duplicate" in caplog.text


@pytest.mark.parametrize(
    "bad",
    [
        {"aliases": [], "lat": 1, "lon": 1},
        {"name": "X", "lat": 95, "lon": 1},
        {"name": "X", "lat": 1},
        {"name": "X", "lat": 1, "lon": 1, "chain": {"city": "C", "galaxy": "G"}},
    ],
)
def test_schema_error_has_line_number(tmp_path, bad):
    p = tmp_path / "g.jsonl"
    p.write_text(json.dumps({"name": "Ok", "lat": 0, "lon": 0}) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(GazetteerError) as err:
        load_gazetteer(p)
    assert err.value.line == 2


def test_address_lookup(gazetteer):
    hit = gazetteer.resolve_address("Jiangxi Nanchang Donghu District")
    assert hit.canonical_name == "Donghu District"
    assert gazetteer.resolve_address("Jiangxi Nanchang Nowhere") is None


# ── extraction ──────────────────────────────────────────


def test_repeated_name_counted_per_occurrence(gazetteer):
    mentions = extract_toponyms([msg("m1", "南昌大雾, 南昌货车")], gazetteer)
    assert [m.surface for m in mentions] == ["南昌", "南昌"]
    assert all(m.entry.canonical_name == "Nanchang" for m in mentions)


def test_overlapping_names_single_longest(gazetteer):
    mentions = extract_toponyms([msg("m1", "Rain in West Lake District")], gazetteer)
    assert [m.surface for m in mentions] == ["West Lake District"]


def test_no_hits(gazetteer):
    assert extract_toponyms([msg("m1", "nothing here"), msg("m2", "")], gazetteer) == []


def test_pluggable_extractor_keeps_unresolved(gazetteer):
    mentions = extract_toponyms([msg("m1", "Gotham and Henan")], gazetteer, extractor=lambda m: ["Gotham", "Henan", "Mars"])
    assert [(m.surface, m.resolved) for m in mentions] == [("Gotham", False), ("Henan", True)]


# ── geocoding ───────────────────────────────────────────


class CountingRemote:
    def __init__(self, answer):
        self.answer = answer
        self.calls = []

    def __call__(self, name):
        self.calls.append(name)
        return self.answer


REMOTE_HIT = (GeoPoint(10.0, 20.0), HierarchyChain.from_mapping({"province": "Far"}))


def test_gazetteer_answers_before_remote(gazetteer):
    remote = CountingRemote(REMOTE_HIT)
    point, chain = geocode("Nanchang", gazetteer, remote, GeocodeCache())
    assert (point.lat, point.lon) == (28.682, 115.8579)
    assert chain.get("city") == "Nanchang"
    assert remote.calls == []


def test_remote_called_once_then_cached(gazetteer, tmp_path):
    remote = CountingRemote(REMOTE_HIT)
    cache = GeocodeCache(tmp_path / "cache.jsonl")
    assert geocode("Faraway", gazetteer, remote, cache) == REMOTE_HIT
    assert geocode("Faraway", gazetteer, remote, cache) == REMOTE_HIT
    assert remote.calls == ["Faraway"]
    reloaded = GeocodeCache(tmp_path / "cache.jsonl")
    assert reloaded.get("Faraway") == REMOTE_HIT
    assert geocode("Faraway", gazetteer, CountingRemote(None), reloaded) == REMOTE_HIT


def test_offline_miss_is_none(gazetteer):
    assert geocode("Faraway", gazetteer) is None


def test_misses_are_not_cached(gazetteer):
    cache = GeocodeCache()
    remote = CountingRemote(None)
    geocode("Nowhere", gazetteer, remote, cache)
    geocode("Nowhere", gazetteer, remote, cache)
    assert len(remote.calls) == 2 and len(cache) == 0


def test_raising_remote_degrades_to_none(gazetteer):
    def boom(name):
        raise RuntimeError("down")

    assert geocode("Faraway", gazetteer, boom) is None


def test_geocoder_resolve_entry(gazetteer):
    geo = Geocoder(gazetteer, CountingRemote(REMOTE_HIT))
    assert geo.resolve_entry("Henan").canonical_name == "Henan"
    remote_entry = geo.resolve_entry("Faraway")
    assert remote_entry.coord == REMOTE_HIT[0] and remote_entry.chain == REMOTE_HIT[1]


# ── HTTP adapter ────────────────────────────────────────


def _http(handler, **cfg):
    config = RemoteGeocoderConfig(
        url_template="https://geo.test/q?address={name}&ak={key}",
        api_key_env="EVENTGEO_TEST_KEY",
        lat_path="result.location.lat",
        lon_path="result.location.lng",
        chain_path="result.chain",
        rate_per_sec=0,
        **cfg,
    )
    sleeps = []
    geo = HttpGeocoder(config, client=httpx.Client(transport=httpx.MockTransport(handler)), sleep=sleeps.append)
    return geo, sleeps


def test_http_success(monkeypatch):
    monkeypatch.setenv("EVENTGEO_TEST_KEY", "k&1")
    seen = []

    def handler(request):
        seen.append(request.url)
        body = {"result": {"location": {"lat": 30.1, "lng": 120.2}, "chain": {"province": "Zhejiang"}}}
        return httpx.Response(200, json=body)

    geo, _ = _http(handler)
    point, chain = geo("西湖 景区")
    assert (point.lat, point.lon) == (30.1, 120.2)
    assert chain.as_dict() == {"province": "Zhejiang"}
    assert seen[0].params["address"] == "西湖 景区"
    assert seen[0].params["ak"] == "k&1"


def test_http_retries_with_backoff_then_succeeds():
    attempts = []

    def handler(request):
        attempts.append(1)
        if len(attempts) < 3:
            return httpx.Response(503)
        return httpx.Response(200, json={"result": {"location": {"lat": 1, "lng": 2}, "chain": {}}})

    geo, sleeps = _http(handler)
    assert geo("x")[0] == GeoPoint(1, 2)
    assert sleeps == [0.5, 1.0]
    assert geo.requests_made == 3


def test_http_gives_up_after_retries():
    def handler(request):
        raise httpx.ConnectError("refused")

    geo, sleeps = _http(handler)
    assert geo("x") is None
    assert geo.requests_made == 4
    assert sleeps == [0.5, 1.0, 2.0]


@pytest.mark.parametrize("response", [httpx.Response(404), httpx.Response(200, json={"result": {}})])
def test_http_not_found_or_malformed(response):
    geo, sleeps = _http(lambda request: response)
    assert geo("x") is None
    assert sleeps == []
