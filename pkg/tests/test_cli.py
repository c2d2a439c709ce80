import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from adsm.cli import main
from adsm.dataset import read_labels
from adsm.plots import anomaly_intervals, score_curve_svg

SMALL_GEN = ["--frames", "32", "--videos-per-scene", "2", "--anomaly-rates", "0.3,0.3,0.3"]


def run(*argv):
    return main([str(a) for a in argv])


def manifest(path):
    return json.loads(path.read_text())


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    assert run("generate", "--out", root / "ds", "--seed", 1, *SMALL_GEN) == 0
    assert run("train", "--data", root / "ds", "--out", root / "m.ckpt", "--epochs", 1) == 0
    assert run("score", "--ckpt", root / "m.ckpt", "--data", root / "ds", "--out", root / "scores" / "geo",
               "--levels", 6) == 0
    assert run("eval", "--scores", root / "scores", "--labels", root / "ds" / "test" / "labels.csv",
               "--out", root / "report.csv") == 0
    return root


def test_generate_layout(tmp_path):
    assert run("generate", "--out", tmp_path / "ds") == 0
    ds = tmp_path / "ds"
    assert {p.name for p in ds.iterdir()} == {"train", "test", "dataset.json", "manifest.json"}
    assert {p.name for p in (ds / "test").glob("*.csv")} == {"labels.csv", "scenes.csv", "anomalies.csv"}
    assert len(list((ds / "train").glob("*.adsv"))) == 10
    assert len(list((ds / "test").glob("*.adsv"))) == 10
    m = manifest(ds / "manifest.json")
    assert m["command"] == "generate" and m["seed"] == 0 and m["tool"] == "adsm"
    assert len(m["outputs"]) == 10 + 10 + 2 + 3 + 1


def test_generate_same_seed_same_checksums(tmp_path):
    for name in ("a", "b"):
        assert run("generate", "--out", tmp_path / name, "--seed", 7, *SMALL_GEN) == 0
    a = manifest(tmp_path / "a" / "manifest.json")["outputs"]
    b = manifest(tmp_path / "b" / "manifest.json")["outputs"]
    assert sorted(a.values()) == sorted(b.values())


def test_usage_errors(tmp_path, capsys):
    assert run("generate") == 1
    assert "--out" in capsys.readouterr().err
    assert run("generate", "--out", tmp_path / "x", "--anomaly-rates", "0.1,0.2") == 1
    assert run("generate", "--out", tmp_path / "x", "--anomaly-rates", "0.1,0.2,1.5") == 1
    assert run("frobnicate") == 1
    assert run() == 1


def test_pipeline_outputs(pipeline):
    assert (pipeline / "m.ckpt.manifest.json").exists()
    with open(pipeline / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["variant", "micro_auc", "macro_auc", "excluded_videos"]
    assert rows[0]["variant"] == "geo"
    assert 0 <= float(rows[0]["micro_auc"]) <= 1
    with open(pipeline / "scores" / "geo" / "scores_final.csv") as fh:
        vals = [float(r["indicator"]) for r in csv.DictReader(fh)]
    assert vals and min(vals) >= 0 and max(vals) <= 1
    m = manifest(pipeline / "scores" / "geo" / "manifest.json")
    assert m["config"]["score"]["schedule"] == "geometric"
    assert len(m["inputs"]) == 2 and len(m["outputs"]) == 2


def test_linear_schedule_changes_raw_scores(pipeline):
    out = pipeline / "scores_linear"
    assert run("score", "--ckpt", pipeline / "m.ckpt", "--data", pipeline / "ds", "--out", out,
               "--levels", 6, "--schedule", "linear") == 0
    assert manifest(out / "manifest.json")["config"]["score"]["schedule"] == "linear"
    geo = (pipeline / "scores" / "geo" / "scores_raw.csv").read_text()
    lin = (out / "scores_raw.csv").read_text()
    assert geo.splitlines()[0] == lin.splitlines()[0] and geo != lin


def test_parallel_scoring_matches_serial(pipeline):
    out = pipeline / "scores_jobs"
    assert run("--jobs", 2, "score", "--ckpt", pipeline / "m.ckpt", "--data", pipeline / "ds", "--out", out,
               "--levels", 6) == 0
    assert (out / "scores_raw.csv").read_bytes() == (pipeline / "scores" / "geo" / "scores_raw.csv").read_bytes()


def test_manifest_replay(pipeline, capsys):
    m = pipeline / "scores" / "geo" / "manifest.json"
    before = manifest(m)["outputs"]
    assert run("--manifest", m) == 0
    assert "outputs match" in capsys.readouterr().out
    assert manifest(m)["outputs"] == before


def test_replay_refuses_changed_inputs(tmp_path):
    assert run("generate", "--out", tmp_path / "ds", *SMALL_GEN) == 0
    assert run("demo-modes", "--out", tmp_path / "f.csv", "--grid", "3,11") == 0
    assert run("plot", "--scores", tmp_path / "scores.csv", "--out", tmp_path / "p") == 2  # missing input
    labels = tmp_path / "ds" / "test" / "labels.csv"
    scores = tmp_path / "s.csv"
    scores.write_text("video_id,frame_index,indicator\nv,0,0.1\nv,1,0.9\n")
    assert run("plot", "--scores", scores, "--labels", labels, "--out", tmp_path / "p") == 0
    scores.write_text("video_id,frame_index,indicator\nv,0,0.2\nv,1,0.9\n")
    assert run("--manifest", tmp_path / "p" / "manifest.json") == 2


def test_eval_single_class_is_an_error(tmp_path, capsys):
    (tmp_path / "s").mkdir()
    (tmp_path / "s" / "scores_final.csv").write_text("video_id,frame_index,indicator\nv,0,0.1\nv,1,0.9\n")
    (tmp_path / "labels.csv").write_text("video_id,frame_index,label\nv,0,0\nv,1,0\n")
    assert run("eval", "--scores", tmp_path / "s", "--labels", tmp_path / "labels.csv",
               "--out", tmp_path / "r.csv") == 2
    assert "UndefinedAUC" in capsys.readouterr().err


def test_geometry_mismatch_names_both_fingerprints(pipeline, tmp_path, capsys):
    cfg = tmp_path / "big.cfg"
    cfg.write_text("# a larger frame size than the dataset\nmodel.size = 32\nepochs = 1\n")
    assert run("train", "--data", pipeline / "ds", "--out", tmp_path / "x.ckpt", "--config", cfg) == 2
    err = capsys.readouterr().err
    assert "incompatible geometry" in err and "dataset" in err and "config" in err


def test_config_file_and_flag_precedence(pipeline, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("epochs = 3\nbatch = 4\nlr = 0.001\nmodel.blocks = 1\nmotion_weights = false\n")
    assert run("train", "--data", pipeline / "ds", "--out", tmp_path / "c.ckpt", "--config", cfg,
               "--epochs", 1) == 0
    c = manifest(tmp_path / "c.ckpt.manifest.json")["config"]
    assert c["epochs"] == 1 and c["batch"] == 4 and c["lr"] == 0.001
    assert c["model"]["blocks"] == 1 and c["motion_weights"] is False
    cfg.write_text("not_a_key = 3\n")
    assert run("train", "--data", pipeline / "ds", "--out", tmp_path / "d.ckpt", "--config", cfg) == 1


def test_divergence_exits_with_numeric_fault(pipeline, tmp_path, capsys):
    assert run("train", "--data", pipeline / "ds", "--out", tmp_path / "x.ckpt", "--epochs", 2,
               "--lr", 1e30) == 3
    assert "numeric fault" in capsys.readouterr().err


def test_corrupt_checkpoint_exits_with_data_error(pipeline, tmp_path):
    bad = tmp_path / "bad.ckpt"
    raw = bytearray((pipeline / "m.ckpt").read_bytes())
    raw[-5] ^= 1
    bad.write_bytes(bytes(raw))
    assert run("score", "--ckpt", bad, "--data", pipeline / "ds", "--out", tmp_path / "s") == 2


def test_plots(pipeline, tmp_path):
    out = tmp_path / "plots"
    assert run("plot", "--scores", pipeline / "scores" / "geo", "--labels", pipeline / "ds" / "test" / "labels.csv",
               "--out", out) == 0
    labels = read_labels(pipeline / "ds" / "test" / "labels.csv")
    svgs = sorted(out.glob("*.svg"))
    assert len(svgs) == len(labels)
    for svg in svgs:
        root = ET.parse(svg).getroot()
        shaded = [e for e in root.iter() if e.get("class") == "anomaly"]
        assert len(shaded) == len(anomaly_intervals(labels[svg.stem][:32]))


def test_score_curve_shading():
    ns = "{http://www.w3.org/2000/svg}"
    plain = ET.fromstring(score_curve_svg("v", np.linspace(0, 1, 20), np.zeros(20)))
    assert not [e for e in plain.iter(ns + "rect") if e.get("class") == "anomaly"]
    labels = np.zeros(20, dtype=int)
    labels[5:9] = 1
    root = ET.fromstring(score_curve_svg("v", np.linspace(0, 1, 20), labels))
    shaded = [e for e in root.iter(ns + "rect") if e.get("class") == "anomaly"]
    assert len(shaded) == 1
    assert (shaded[0].get("data-start"), shaded[0].get("data-end")) == ("5", "9")


def test_demo_modes(tmp_path, capsys):
    assert run("demo-modes", "--out", tmp_path / "field.csv", "--grid", "6,31") == 0
    assert "minor mode" in capsys.readouterr().out
    with open(tmp_path / "field.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 31 * 31
    assert list(rows[0]) == ["x", "y", "density", "score_x", "score_y", "score_norm"]
    ET.parse(tmp_path / "field.svg")
    assert run("demo-modes", "--out", tmp_path / "g.csv", "--mixture", "0.5,0,0") == 1
    assert run("demo-modes", "--out", tmp_path / "g.csv", "--grid", "6") == 1
