import json
import struct

import pytest
import yaml

from encmine.cli import main

CONFIG = {
    "branches": {
        "time": {"params": {"hidden": 4, "epochs": 3}},
        "image": {"params": {"channels": [2], "epochs": 2}},
        "ratio": {"params": {"n_estimators": 10}},
    },
    "layer2": {"kind": "random_forest", "params": {"n_estimators": 10}, "stacking_folds": 3},
    "seed": 4,
}

OUTPUTS = ("benign.pcap", "malicious.pcap", "labels.yaml", "features.jsonl", "features.csv", "labelled.jsonl",
           "bundles.bin", "model.bin", "train.json", "predictions.jsonl", "metrics.json", "metrics.txt")


def run(*argv):
    return main([str(a) for a in argv])


def pipeline(d):
    cfg = d / "config.yaml"
    cfg.write_text(yaml.safe_dump(CONFIG))
    c = ["--config", cfg]
    assert run(*c, "synth", "--corpus", "enc_signal", "--sessions", 24, "--out", d) == 0
    assert run(*c, "extract", d / "benign.pcap", d / "malicious.pcap", "--out", d / "features.jsonl",
               "--csv", d / "features.csv") == 0
    assert run(*c, "label", d / "features.jsonl", "--labels", d / "labels.yaml", "--out", d / "labelled.jsonl") == 0
    assert run(*c, "train", d / "labelled.jsonl", "--out", d / "model.bin", "--report", d / "train.json") == 0
    assert run(*c, "tensorize", d / "labelled.jsonl", "--model", d / "model.bin", "--out", d / "bundles.bin") == 0
    assert run(*c, "predict", d / "bundles.bin", "--model", d / "model.bin", "--out", d / "predictions.jsonl") == 0
    assert run(*c, "evaluate", d / "labelled.jsonl", "--model", d / "model.bin", "--out", d / "metrics.json",
               "--table", d / "metrics.txt") == 0


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    a, b = tmp_path_factory.mktemp("a"), tmp_path_factory.mktemp("b")
    pipeline(a)
    pipeline(b)
    return a, b


def error_record(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_pipeline_produces_report(runs):
    d = runs[0]
    report = json.loads((d / "metrics.json").read_text())
    assert set(report["rows"]) == {"framework", "branch:time", "branch:image", "branch:ratio"}
    assert report["rows"]["framework"]["confusion"]["tp"] + report["rows"]["framework"]["confusion"]["fn"] == 12
    assert "Accuracy" in (d / "metrics.txt").read_text()


def test_every_output_carries_provenance(runs):
    d = runs[0]
    for name in ("features.jsonl", "labelled.jsonl", "predictions.jsonl"):
        head = json.loads((d / name).read_text().splitlines()[0])
        prov = head.get("_provenance", head)
        assert {"tool_version", "manifest_version", "config_digest"} <= set(prov)
    assert "config_digest" in json.loads((d / "metrics.json").read_text())["provenance"]
    assert "config_digest" in (d / "features.csv").read_text().splitlines()[0]


def test_reruns_are_byte_identical(runs):
    a, b = runs
    for name in OUTPUTS:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_empty_capture_gives_empty_feature_file(tmp_path):
    pcap = tmp_path / "empty.pcap"
    pcap.write_bytes(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1))
    assert run("extract", pcap, "--out", tmp_path / "f.jsonl") == 0
    lines = (tmp_path / "f.jsonl").read_text().splitlines()
    assert len(lines) == 1 and "_provenance" in lines[0]


def test_single_class_training_fails(runs, tmp_path, capsys):
    d = runs[0]
    assert run("extract", d / "benign.pcap", "--out", tmp_path / "f.jsonl") == 0
    (tmp_path / "l.yaml").write_text("default: benign\n")
    assert run("label", tmp_path / "f.jsonl", "--labels", tmp_path / "l.yaml", "--out", tmp_path / "l.jsonl") == 0
    capsys.readouterr()
    assert run("train", tmp_path / "l.jsonl", "--out", tmp_path / "m.bin") == 4
    err = error_record(capsys)
    assert err["error"] == "DegenerateLabels" and err["exit_code"] == 4 and err["command"] == "train"


def test_bad_capture_is_a_data_error(tmp_path, capsys):
    (tmp_path / "x.pcap").write_bytes(b"not a pcap at all")
    assert run("extract", tmp_path / "x.pcap", "--out", tmp_path / "f.jsonl") == 3
    assert error_record(capsys)["error"] == "BadMagic"


def test_missing_file_is_a_data_error(tmp_path, capsys):
    assert run("extract", tmp_path / "missing.pcap", "--out", tmp_path / "f.jsonl") == 3


def test_usage_errors(tmp_path, capsys):
    assert run("frobnicate") == 2
    (tmp_path / "c.yaml").write_text("bogus: {}\n")
    assert run("--config", tmp_path / "c.yaml", "extract", "x", "--out", "y") == 2
    assert error_record(capsys)["exit_code"] == 2


def test_uncovered_capture(runs, tmp_path, capsys):
    (tmp_path / "l.yaml").write_text("captures:\n  other: benign\n")
    assert run("label", runs[0] / "features.jsonl", "--labels", tmp_path / "l.yaml", "--out", tmp_path / "o") == 3
    assert error_record(capsys)["error"] == "UncoveredCapture"


def test_evaluate_refuses_other_feature_config(runs, tmp_path, capsys):
    d = runs[0]
    (tmp_path / "c.yaml").write_text("policy:\n  encrypted_alerts: false\n")
    assert run("--config", tmp_path / "c.yaml", "extract", d / "benign.pcap", d / "malicious.pcap",
               "--out", tmp_path / "f.jsonl") == 0
    assert run("evaluate", tmp_path / "f.jsonl", "--model", d / "model.bin", "--out", tmp_path / "m.json") == 4
    assert error_record(capsys)["error"] == "DigestMismatch"


def test_flags_override_config(runs, tmp_path):
    d = runs[0]
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump(CONFIG))
    assert run("--config", cfg, "train", d / "labelled.jsonl", "--layer2", "average_ensemble",
               "--out", tmp_path / "m.bin", "--report", tmp_path / "r.json") == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert "stacking_log" not in report
