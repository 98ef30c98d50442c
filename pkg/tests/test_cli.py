import hashlib
import json

import numpy as np
import pytest

from statetrace import cli
from statetrace.detector import TASK_PRESET, ChangePointReport, run_detection
from statetrace.forecaster import load_model
from statetrace.synth import read_benchmark


def tree_digest(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.rglob("*")) if p.is_file()}


def run_pipeline(root, seed=0):
    data, model, reports, evals, cov = (root / n for n in ("data", "model", "reports", "eval", "cov"))
    steps = [
        ["synth", "--preset", "task", "--blocks", "3", "--channels", "4", "--block", "30", "--jitter", "3",
         "--n-train", "4", "--n-val", "2", "--n-test", "2", "--seed", str(seed), "--out", str(data)],
        ["train", "--data", str(data), "--hidden", "8,8", "--epochs", "3", "--seed", str(seed), "--out", str(model)],
        ["detect", "--data", str(data), "--model", str(model / "model.json"), "--out", str(reports)],
        ["eval", "--data", str(data), "--reports", str(reports), "--lag-samples", "1", "--out", str(evals)],
        ["eval", "--sweep", "--data", str(data), "--model", str(model / "model.json"), "--out", str(evals)],
        ["covtest", "--data", str(data), "--reports", str(reports), "--permutations", "50", "--out", str(cov)],
    ]
    for argv in steps:
        assert cli.run_cli(argv) == 0, argv
    return data, model, reports, evals, cov


def test_full_pipeline(tmp_path):
    data, model, reports, evals, cov = run_pipeline(tmp_path)
    manifest = json.loads((data / "manifest.json").read_text())
    assert len(manifest) == 8
    assert all(len(v["ground_truth_cps"]) == 2 for v in manifest.values())
    curve = (model / "loss_curve.csv").read_text().splitlines()
    assert curve[0] == "epoch,loss" and len(curve) == 4
    doc = json.loads((evals / "eval.json").read_text())
    assert doc["n_subjects"] == 2 and doc["lag_samples"] == 1
    if doc["mean_error_sen"] is not None:
        assert np.isfinite(doc["mean_error_sen"]) and np.isfinite(doc["mean_error_spec"])
    sweep = (evals / "sweep.csv").read_text().splitlines()
    assert sweep[0] == "lambda,sigma,error_sen,error_spec,n_failed" and len(sweep) == 13
    assert sorted(p.name for p in cov.glob("*.json")) == ["test-000.json", "test-001.json"]
    assert (reports / "change_points.csv").exists()


def test_detect_defaults_to_task_preset(tmp_path):
    data, model, reports, _, _ = run_pipeline(tmp_path)
    args = cli.build_parser().parse_args(["detect", "--data", "x", "--model", "y", "--out", "z"])
    cfg = cli._detection_config(cli.resolve(args))
    assert (cfg.sigma, cfg.lam) == (6.0, 0.0)
    m = load_model(model / "model.json")
    for subj in read_benchmark(data, "test"):
        rep = ChangePointReport.from_dict(json.loads((reports / f"{subj.data.subject_id}.json").read_text()))
        assert rep.to_json() == run_detection(subj.data, m, TASK_PRESET).to_json()


def test_pipeline_is_bit_reproducible(tmp_path):
    run_pipeline(tmp_path / "a", seed=3)
    run_pipeline(tmp_path / "b", seed=3)
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


def test_inputs_not_mutated(tmp_path):
    data, model, reports, _, _ = run_pipeline(tmp_path)
    before = {d: tree_digest(d) for d in (data, model, reports)}
    assert cli.run_cli(["detect", "--data", str(data), "--model", str(model / "model.json"), "--out", str(tmp_path / "r2")]) == 0
    assert cli.run_cli(["eval", "--data", str(data), "--reports", str(reports), "--out", str(tmp_path / "e2")]) == 0
    assert {d: tree_digest(d) for d in (data, model, reports)} == before


def test_unknown_flag_exits_1_without_output(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.run_cli(["synth", "--bogus", "--out", str(out)]) == 1
    assert not out.exists()
    assert cli.run_cli(["frobnicate"]) == 1
    assert cli.run_cli(["train", "--out", str(out)]) == 1
    assert not out.exists()
    assert "usage" in capsys.readouterr().err


def test_bad_data_exits_2(tmp_path):
    bad = tmp_path / "model.json"
    bad.write_text("{not json")
    csv = tmp_path / "u.csv"
    csv.write_text("1,2\n3,4\n5,6\n")
    assert cli.run_cli(["detect", "--data", str(csv), "--model", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert cli.run_cli(["detect", "--data", str(csv), "--model", str(bad), "--sigma", "-1", "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_config_file_and_flag_precedence(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"lambda": 2.0, "sigma": 4.0}))
    args = cli.build_parser().parse_args(["detect", "--config", str(conf), "--sigma", "1"])
    cfg = cli._detection_config(cli.resolve(args))
    assert (cfg.lam, cfg.sigma) == (2.0, 1.0)
    conf.write_text(json.dumps({"nonsense": 1}))
    assert cli.run_cli(["detect", "--config", str(conf)]) == 1


def test_rest_preset_flag():
    args = cli.build_parser().parse_args(["detect", "--preset", "rest"])
    cfg = cli._detection_config(cli.resolve(args))
    assert (cfg.sigma, cfg.lam) == (3.0, 1.0)


def test_lag_seconds_requires_tr(tmp_path):
    data, _, reports, _, _ = run_pipeline(tmp_path)
    out = tmp_path / "lag"
    assert cli.run_cli(["eval", "--data", str(data), "--reports", str(reports), "--lag-seconds", "6", "--out", str(out)]) == 1
    assert cli.run_cli(["eval", "--data", str(data), "--reports", str(reports), "--lag-seconds", "6", "--tr", "0.72", "--out", str(out)]) == 0
    assert json.loads((out / "eval.json").read_text())["lag_samples"] == 8
