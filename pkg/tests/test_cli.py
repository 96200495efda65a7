import json
import pytest

from conftest import msg
from eventgeo.cli import main
from eventgeo.gazetteer import GeoPoint
from eventgeo.metrics import haversine
from eventgeo.ingest import write_dataset
from eventgeo.pipeline import atomic_write_text

FILES = ("clusters.jsonl", "model.json", "loss_history.csv", "locations.jsonl", "locations.geojson", "unlocatable.jsonl", "report.json")


def _err(capsys):
    lines = [line for line in capsys.readouterr().err.splitlines() if line.startswith("{")]
    return json.loads(lines[-1])


def _jsonl(path):
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def test_detect_writes_five_events(workspace, fixture, tmp_path):
    assert main(["detect", "--config", str(workspace())]) == 0
    out = tmp_path / "out"
    clusters = _jsonl(out / "clusters.jsonl")
    assert sorted(c["event_id"] for c in clusters) == sorted(fixture.truths)
    assert sum(len(c["message_ids"]) for c in clusters) == len(fixture.messages)
    loss = (out / "loss_history.csv").read_text().splitlines()
    assert loss[0] == "epoch,loss" and len(loss) == 201
    assert json.loads((out / "model.json").read_text())["format"] == "eventgeo-model/1"


def test_detect_is_byte_reproducible(workspace, tmp_path):
    assert main(["detect", "--config", str(workspace()), "--output", str(tmp_path / "a")]) == 0
    assert main(["detect", "--config", str(workspace()), "--output", str(tmp_path / "b")]) == 0
    for name in ("clusters.jsonl", "model.json", "loss_history.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_missing_gazetteer(workspace, tmp_path, capsys):
    cfg = workspace(gazetteer_path=str(tmp_path / "nope.jsonl"))
    assert main(["detect", "--config", str(cfg)]) == 2
    assert _err(capsys) == {"error": "gazetteer: not found", "exit_code": 2}


def test_missing_config(tmp_path, capsys):
    assert main(["detect", "--config", str(tmp_path / "none.yaml")]) == 2
    assert _err(capsys)["exit_code"] == 2


def test_unknown_config_key(workspace, capsys):
    assert main(["detect", "--config", str(workspace(bogus=1))]) == 2
    assert "bogus" in _err(capsys)["error"]


def test_geolocate_five_points(workspace, tmp_path):
    cfg = str(workspace())
    assert main(["detect", "--config", cfg]) == 0
    assert main(["geolocate", "--config", cfg]) == 0
    doc = json.loads((tmp_path / "out" / "locations.geojson").read_text())
    assert len(doc["features"]) == 5
    assert all(f["geometry"]["type"] == "Point" for f in doc["features"])
    assert _jsonl(tmp_path / "out" / "unlocatable.jsonl") == []


def _true_clusters(fixture, path, extra=None):
    groups = {}
    for m in fixture.messages:
        groups.setdefault(m.event_label, []).append(m.id)
    recs = [{"event_id": e, "message_ids": ids} for e, ids in sorted(groups.items())]
    path.write_text("".join(json.dumps(r) + "\n" for r in recs + (extra or [])))
    return path


def test_unresolvable_cluster_goes_to_sidecar(workspace, fixture, tmp_path):
    write_dataset(fixture.messages + [msg("x1", "no places here"), msg("x2", "none here either")], tmp_path / "data.jsonl")
    clusters = _true_clusters(fixture, tmp_path / "c.jsonl", [{"event_id": "ghost", "message_ids": ["x1", "x2"]}])
    assert main(["geolocate", "--config", str(workspace()), "--clusters", str(clusters)]) == 0
    out = tmp_path / "out"
    assert [r["event_id"] for r in _jsonl(out / "unlocatable.jsonl")] == ["ghost"]
    assert "ghost" not in {r["event_id"] for r in _jsonl(out / "locations.jsonl")}
    assert len(_jsonl(out / "locations.jsonl")) == 5


def test_no_fit_drops_pseudo_toponyms(workspace, fixture, tmp_path):
    clusters = _true_clusters(fixture, tmp_path / "c.jsonl")
    cfg = str(workspace())
    assert main(["geolocate", "--config", cfg, "--clusters", str(clusters)]) == 0
    assert all("pseudo_toponym" in r for r in _jsonl(tmp_path / "out" / "locations.jsonl"))
    assert main(["geolocate", "--config", cfg, "--clusters", str(clusters), "--no-fit"]) == 0
    assert not any("pseudo_toponym" in r for r in _jsonl(tmp_path / "out" / "locations.jsonl"))


def test_jobs_do_not_change_output(workspace, fixture, tmp_path):
    clusters = str(_true_clusters(fixture, tmp_path / "c.jsonl"))
    cfg = str(workspace())
    assert main(["geolocate", "--config", cfg, "--clusters", clusters, "--output", str(tmp_path / "j1")]) == 0
    assert main(["geolocate", "--config", cfg, "--clusters", clusters, "--jobs", "4", "--output", str(tmp_path / "j4")]) == 0
    assert (tmp_path / "j1" / "locations.jsonl").read_bytes() == (tmp_path / "j4" / "locations.jsonl").read_bytes()


def _write_points(path, points):
    path.write_text("".join(json.dumps({"event_id": e, "lat": p[0], "lon": p[1]}) + "\n" for e, p in points.items()))
    return path


def test_eval_perfect(workspace, tmp_path, capsys):
    pts = {f"e{i}": (10.0 + i, 100.0 + i) for i in range(5)}
    loc = _write_points(tmp_path / "loc.jsonl", pts)
    truth = _write_points(tmp_path / "truth.jsonl", pts)
    assert main(["eval", "--config", str(workspace()), "--locations", str(loc), "--truth", str(truth)]) == 0
    out = capsys.readouterr().out
    assert "mean error: 0.00 km" in out
    assert out.count(": 100.00%") == 4
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["mean_km"] == 0.0 and report["acc"]["400"] == 1.0


def test_eval_nine_of_thirty_seven(workspace, tmp_path, capsys):
    truth = {f"e{i}": (30.0, 110.0) for i in range(37)}
    est = {e: (30.0, 110.0) if i < 9 else (40.0, 110.0) for i, e in enumerate(truth)}
    loc = _write_points(tmp_path / "loc.jsonl", est)
    tru = _write_points(tmp_path / "truth.jsonl", truth)
    argv = ["eval", "--config", str(workspace()), "--locations", str(loc), "--truth", str(tru), "--thresholds", "100"]
    assert main(argv) == 0
    assert "ACC@100km: 24.32%" in capsys.readouterr().out


def test_eval_empty_truth(workspace, tmp_path, capsys):
    loc = _write_points(tmp_path / "loc.jsonl", {"a": (0.0, 0.0)})
    (tmp_path / "truth.jsonl").write_text("")
    assert main(["eval", "--config", str(workspace()), "--locations", str(loc), "--truth", str(tmp_path / "truth.jsonl")]) == 3
    assert _err(capsys)["exit_code"] == 3


def test_eval_disjoint_ids(workspace, tmp_path):
    loc = _write_points(tmp_path / "loc.jsonl", {"a": (0.0, 0.0)})
    tru = _write_points(tmp_path / "truth.jsonl", {"b": (0.0, 0.0)})
    assert main(["eval", "--config", str(workspace()), "--locations", str(loc), "--truth", str(tru)]) == 3


def test_pipeline_end_to_end(workspace, fixture, tmp_path, capsys):
    assert main(["pipeline", "--config", str(workspace())]) == 0
    out = tmp_path / "out"
    for name in FILES:
        assert (out / name).exists()
    report = json.loads((out / "report.json").read_text())
    assert report["n_events"] == 5 and report["n_unlocatable"] == 0
    for rec in _jsonl(out / "locations.jsonl"):
        assert haversine(GeoPoint(rec["lat"], rec["lon"]), fixture.truths[rec["event_id"]]) < 30
    assert "ACC@100km: 100.00%" in capsys.readouterr().out
    assert not [p for p in out.iterdir() if p.name.endswith(".tmp")]


def test_ablation_is_worse(workspace, tmp_path):
    cfg = str(workspace())
    assert main(["pipeline", "--config", cfg, "--output", str(tmp_path / "full")]) == 0
    assert main(["pipeline", "--config", cfg, "--ablation", "gtop--", "--output", str(tmp_path / "abl")]) == 0
    full = json.loads((tmp_path / "full" / "report.json").read_text())
    abl = json.loads((tmp_path / "abl" / "report.json").read_text())
    assert abl["mean_km"] > full["mean_km"]
    assert not any("pseudo_toponym" in r for r in _jsonl(tmp_path / "abl" / "locations.jsonl"))


def test_gazetteer_validate(workspace, tmp_path, capsys):
    assert main(["gazetteer-validate", "--config", str(workspace())]) == 0
    assert "48 entries" in capsys.readouterr().out
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"name": "X", "lat": 1}\n')
    assert main(["gazetteer-validate", "--config", str(workspace()), "--gazetteer", str(bad)]) == 2
    assert "line 1" in _err(capsys)["error"]


def test_interrupted_write_leaves_nothing(tmp_path, monkeypatch):
    target = tmp_path / "report.json"
    target.write_text("old")

    def explode(src, dst):
        raise KeyboardInterrupt

    monkeypatch.setattr("eventgeo.pipeline.os.replace", explode)
    with pytest.raises(KeyboardInterrupt):
        atomic_write_text(target, "new")
    assert target.read_text() == "old"
    assert [p.name for p in tmp_path.iterdir()] == ["report.json"]


def test_bad_jobs(workspace, capsys):
    assert main(["detect", "--config", str(workspace()), "--jobs", "0"]) == 2


def test_eval_without_estimates(workspace, tmp_path, capsys):
    loc = _write_points(tmp_path / "loc.jsonl", {})
    tru = _write_points(tmp_path / "truth.jsonl", {"a": (0.0, 0.0)})
    assert main(["eval", "--config", str(workspace()), "--locations", str(loc), "--truth", str(tru)]) == 3
    assert "disjoint" in _err(capsys)["error"]


def test_eval_all_unlocatable_reports_null_error(workspace, tmp_path):
    (tmp_path / "loc.jsonl").write_text("")
    tru = _write_points(tmp_path / "truth.jsonl", {"a": (0.0, 0.0)})
    report_path = tmp_path / "out" / "report.json"
    assert main(["eval", "--config", str(workspace()), "--locations", str(tmp_path / "loc.jsonl"), "--truth", str(tru)]) == 3
    assert not report_path.exists()
