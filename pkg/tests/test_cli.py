import csv
import json

import numpy as np
import pytest
import yaml

from spraydet import cli
from spraydet.io import load_dataset, load_manifest, read_mask, read_scores
from spraydet.simulator import tree_digest

SCENE = {"lead_distance": 30, "lead_distance_jitter": 20, "lead_speed_kmh": None}


def write_cfg(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    cfg = write_cfg(root / "sim.yaml", {"output": str(root / "data"), "simulate": {"frames": 8, "base_seed": 0, "scene": SCENE}})
    assert cli.main(["simulate", str(cfg)]) == 0
    return root / "data" / "manifest.json"


def test_simulate_minimal_and_nested_output(tmp_path):
    out = tmp_path / "a" / "b" / "c"
    cfg = write_cfg(tmp_path / "c.yaml", {"simulate": {"frames": 5}})
    assert cli.main(["simulate", str(cfg), "--out", str(out)]) == 0
    assert len(load_manifest(out / "manifest.json").frames) == 5
    resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
    assert "output" not in resolved
    assert resolved["simulate"]["scene"]["spray_points"] == 300


def test_simulate_rerun_identical(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", {"simulate": {"frames": 3, "scene": SCENE}})
    assert cli.main(["simulate", str(cfg), "--out", str(tmp_path / "x")]) == 0
    assert cli.main(["simulate", str(cfg), "--out", str(tmp_path / "y")]) == 0
    assert tree_digest(tmp_path / "x") == tree_digest(tmp_path / "y")


def test_calibrate_then_threshold_filter(tmp_path, dataset):
    cfg = write_cfg(tmp_path / "c.yaml", {"manifest": str(dataset), "calibrate": {"tpr_levels": [0.9, 0.99]}})
    assert cli.main(["calibrate", str(cfg), "--out", str(tmp_path / "cal")]) == 0
    cal = json.loads((tmp_path / "cal" / "calibration.json").read_text())
    tau = {lvl["tpr"]: lvl["tau"] for lvl in cal["levels"]}[0.99]

    fcfg = write_cfg(tmp_path / "f.yaml", {
        "manifest": str(dataset),
        "filter": {"method": "threshold", "tpr": 0.99, "calibration": str(tmp_path / "cal" / "calibration.json")},
    })
    out = tmp_path / "filt"
    assert cli.main(["filter", str(fcfg), "--out", str(out)]) == 0
    original = load_dataset(dataset)
    m = load_manifest(dataset)
    for fr, rec in zip(original, m.frames):
        mask = read_mask(out / "masks" / f"{fr.frame_id}.mask", len(fr.cloud))
        assert mask.tolist() == (fr.scores <= np.float64(tau)).tolist()
        assert read_scores(out / "scores" / f"{fr.frame_id}.score").tobytes() == fr.scores[mask].tobytes()
    rows = read_csv(out / "filter_metrics.csv")
    assert len(rows) == len(original)
    resolved = yaml.safe_load((out / "resolved_config.yaml").read_text())
    assert "manifest_sha256" in resolved["inputs"] and "calibration_sha256" in resolved["inputs"]


def test_filter_dsor_metrics(tmp_path, dataset):
    cfg = write_cfg(tmp_path / "c.yaml", {"manifest": str(dataset), "filter": {"method": "dsor", "dsor": {"k": 4}}})
    assert cli.main(["filter", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "filter_metrics.csv")
    assert set(rows[0]) == {"frame_id", "n_in", "n_kept", "valid_tpr", "noise_recall", "noise_precision"}
    assert len(load_dataset(tmp_path / "o" / "manifest.json")) == 8


def test_filter_none_passes_through(tmp_path, dataset):
    cfg = write_cfg(tmp_path / "c.yaml", {"manifest": str(dataset), "filter": {"method": "none"}})
    assert cli.main(["filter", str(cfg), "--out", str(tmp_path / "o")]) == 0
    for a, b in zip(load_dataset(dataset), load_dataset(tmp_path / "o" / "manifest.json")):
        assert a.cloud == b.cloud


def test_filter_missing_scores_is_data_error(tmp_path, dataset, capsys):
    doc = json.loads(dataset.read_text())
    for rec in doc["frames"]:
        rec["cloud"] = str(dataset.parent / rec["cloud"])
        rec.pop("scores")
        for k in ("labels", "gt", "radar"):
            rec[k] = str(dataset.parent / rec[k])
    bare = tmp_path / "bare.json"
    bare.write_text(json.dumps(doc))
    cfg = write_cfg(tmp_path / "c.yaml", {"manifest": str(bare), "filter": {"method": "threshold", "tau": 1.0}})
    assert cli.main(["filter", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_DATA
    assert "000000" in capsys.readouterr().err


def test_detect_then_gate(tmp_path, dataset):
    cfg = write_cfg(tmp_path / "c.yaml", {"manifest": str(dataset), "gate": {"gamma": 0.5}})
    assert cli.main(["detect", str(cfg), "--out", str(tmp_path / "d")]) == 0
    detected = load_dataset(tmp_path / "d" / "manifest.json")
    assert all(fr.detections is not None for fr in detected)
    assert cli.main(["gate", str(cfg), "--manifest", str(tmp_path / "d" / "manifest.json"), "--out", str(tmp_path / "g")]) == 0
    rows = read_csv(tmp_path / "g" / "gate_summary.csv")
    assert all(int(r["n_kept"]) <= int(r["n_in"]) for r in rows)


def test_gate_without_detections(tmp_path, dataset):
    cfg = write_cfg(tmp_path / "c.yaml", {"manifest": str(dataset)})
    assert cli.main(["gate", str(cfg), "--out", str(tmp_path / "g")]) == cli.EXIT_DATA


def test_pipeline_variants(tmp_path, dataset):
    cfg = write_cfg(tmp_path / "c.yaml", {"manifest": str(dataset), "pipeline": {"variants": ["none", "filter", "gate", "filter+gate"]}})
    assert cli.main(["pipeline", str(cfg), "--out", str(tmp_path / "p"), "--workers", "2"]) == 0
    rows = read_csv(tmp_path / "p" / "report.csv")
    assert [(r["variant"], r["bin"]) for r in rows][:3] == [("none", "0-25m"), ("none", ">25m"), ("none", "overall")]
    assert len(rows) == 12
    assert "filter+gate" in (tmp_path / "p" / "report.txt").read_text()
    assert (tmp_path / "p" / "detections" / "filter+gate.jsonl").exists()


def test_pipeline_gate_without_radar(tmp_path, dataset):
    doc = json.loads(dataset.read_text())
    for rec in doc["frames"]:
        rec.pop("radar")
        for k in ("cloud", "labels", "scores", "gt"):
            rec[k] = str(dataset.parent / rec[k])
    bare = tmp_path / "bare.json"
    bare.write_text(json.dumps(doc))
    cfg = write_cfg(tmp_path / "c.yaml", {"manifest": str(bare)})
    assert cli.main(["pipeline", str(cfg), "--out", str(tmp_path / "p")]) == cli.EXIT_DATA


def test_sweep_grids_and_consistency(tmp_path, dataset):
    cfg = write_cfg(tmp_path / "c.yaml", {
        "manifest": str(dataset),
        "filter": {"tpr": 0.95},
        "sweep": {"tpr_levels": [0.90, 0.95, 0.99], "gamma_levels": [0, 0.5, 1.0, 1.5]},
    })
    assert cli.main(["sweep", str(cfg), "--out", str(tmp_path / "s")]) == 0
    tau_rows = read_csv(tmp_path / "s" / "sweep_tau.csv")
    gamma_rows = read_csv(tmp_path / "s" / "sweep_gamma.csv")
    assert len(tau_rows) == 9 and len(gamma_rows) == 12
    assert sorted({float(r["level"]) for r in gamma_rows}) == [0.0, 0.5, 1.0, 1.5]

    single = write_cfg(tmp_path / "one.yaml", {"manifest": str(dataset), "filter": {"tpr": 0.95}, "sweep": {"tpr_levels": [0.95]}})
    pipe = write_cfg(tmp_path / "pipe.yaml", {"manifest": str(dataset), "filter": {"tpr": 0.95}})
    assert cli.main(["sweep", str(single), "--out", str(tmp_path / "s1")]) == 0
    assert cli.main(["pipeline", str(pipe), "--out", str(tmp_path / "p1")]) == 0
    swept = [r["ap"] for r in read_csv(tmp_path / "s1" / "sweep_tau.csv")]
    direct = [r["ap"] for r in read_csv(tmp_path / "p1" / "report.csv")]
    assert swept == direct


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"filter": {"method": "median"}},
    {"filter": {"dsor": {"kk": 3}}},
    {"gate": {"gamma": -1}},
    {"eval": {"iou_threshold": 2}},
    {"pipeline": {"variants": ["everything"]}},
    {"workers": 0},
])
def test_config_errors(tmp_path, dataset, doc):
    cfg = write_cfg(tmp_path / "c.yaml", {"manifest": str(dataset), **doc})
    assert cli.main(["pipeline", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_missing_output_is_config_error(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", {"simulate": {"frames": 1}})
    assert cli.main(["simulate", str(cfg)]) == cli.EXIT_CONFIG


def test_missing_manifest_is_data_error(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", {"manifest": str(tmp_path / "nope.json")})
    assert cli.main(["pipeline", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_DATA


def test_internal_fault_exit_code(tmp_path, monkeypatch):
    def boom(run):
        raise RuntimeError("unexpected")

    monkeypatch.setitem(cli.COMMANDS, "simulate", boom)
    cfg = write_cfg(tmp_path / "c.yaml", {"simulate": {"frames": 1}})
    assert cli.main(["simulate", str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_INTERNAL


def test_workers_from_env(tmp_path, dataset, monkeypatch):
    monkeypatch.setenv("SPRAYDET_WORKERS", "2")
    cfg = write_cfg(tmp_path / "c.yaml", {"manifest": str(dataset)})
    assert cli.main(["pipeline", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert yaml.safe_load((tmp_path / "o" / "resolved_config.yaml").read_text())["workers"] == 2


def test_relative_paths_resolve_against_config(tmp_path, dataset):
    cfg = write_cfg(dataset.parent.parent / "rel.yaml", {"manifest": "data/manifest.json"})
    assert cli.main(["pipeline", str(cfg), "--out", str(tmp_path / "o")]) == 0


def test_config_output_resolves_against_config(tmp_path, monkeypatch):
    (tmp_path / "cfg").mkdir()
    cfg = write_cfg(tmp_path / "cfg" / "c.yaml", {"output": "sim", "simulate": {"frames": 1}})
    monkeypatch.chdir(tmp_path)
    assert cli.main(["simulate", str(cfg)]) == 0
    assert (tmp_path / "cfg" / "sim" / "manifest.json").exists()
    assert not (tmp_path / "sim").exists()
