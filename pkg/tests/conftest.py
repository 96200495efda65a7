from datetime import datetime, timezone

import numpy as np
import pytest

from eventgeo.gazetteer import (
    Gazetteer,
    GazetteerEntry,
    GeoPoint,
    HierarchyChain,
    default_gazetteer_path,
    load_gazetteer,
)
from eventgeo.ingest import Message, write_dataset
from eventgeo.synthetic import make_fixture


@pytest.fixture(scope="session")
def gazetteer():
    return load_gazetteer(default_gazetteer_path())


@pytest.fixture(scope="session")
def fixture(gazetteer):
    return make_fixture(gazetteer, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def entry(name, lat=0.0, lon=0.0, aliases=(), **chain):
    return GazetteerEntry(name, frozenset(aliases), HierarchyChain.from_mapping(chain), GeoPoint(lat, lon))


def msg(id, text="", user="u1", mentions=(), tokens=None, ts=None, label=None, coord=None):
    return Message(
        id=id,
        text=text,
        user_id=user,
        mentioned_user_ids=tuple(mentions),
        timestamp=ts or datetime(2024, 8, 25, tzinfo=timezone.utc),
        tokens=tuple(tokens) if tokens is not None else None,
        event_label=label,
        truth_coord=coord,
    )


@pytest.fixture
def small_gazetteer():
    return Gazetteer(
        [
            entry("Henan", 33.88, 113.61, province="Henan"),
            entry("Zhengzhou", 34.75, 113.63, aliases=["郑州"], province="Henan", city="Zhengzhou"),
            entry("Jiangxi", 27.61, 115.72, province="Jiangxi"),
            entry("Nanchang", 28.68, 115.86, aliases=["南昌"], province="Jiangxi", city="Nanchang"),
            entry("West Lake District", 30.26, 120.13, province="Zhejiang", city="Hangzhou", district="West Lake District"),
            entry(
                "West Lake",
                30.243,
                120.15,
                aliases=["西湖"],
                province="Zhejiang",
                city="Hangzhou",
                district="West Lake District",
                township="West Lake Street",
                road="Manjuelong Road",
            ),
        ]
    )


@pytest.fixture
def write_messages(tmp_path):
    def _write(messages, name="data.jsonl"):
        path = tmp_path / name
        write_dataset(messages, path)
        return path

    return _write


@pytest.fixture
def workspace(tmp_path, fixture):
    """Dataset + YAML config in a temp dir; returns a factory for the config path."""
    import yaml

    write_dataset(fixture.messages, tmp_path / "data.jsonl")

    def _make(name="config.yaml", output="out", **overrides):
        cfg = {
            "dataset_path": "data.jsonl",
            "gazetteer_path": str(default_gazetteer_path()),
            "output_dir": output,
            "seed": 0,
        }
        cfg.update(overrides)
        path = tmp_path / name
        path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
        return path

    return _make
