"""``statetrace`` command line: synth, train, detect, eval, covtest.

Exit codes: 0 success, 1 usage error, 2 data or validation error. Messages go
to stderr; results go to files under ``--out``. Set ``STATETRACE_LOG`` (e.g.
``DEBUG``) to change verbosity.

Every flag can also come from a JSON ``--config`` file keyed by the flag's long
name with dashes replaced by underscores; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import detector, evaluation, forecaster, synth
from .errors import NoDetectionsError, StatetraceError
from .numerics import read_csv

log = logging.getLogger("statetrace")

DEFAULTS = {
    # synth
    "preset": "task",
    "channels": None,
    "n_train": 40,
    "n_val": 5,
    "n_test": 10,
    "block": None,
    "blocks": None,
    "jitter": None,
    "smoothing": None,
    # train
    "split": None,
    "architecture": "desk-scale",
    "hidden": None,
    "epochs": 50,
    "learning_rate": 1e-3,
    "batch_size": 8,
    "bptt_window": 32,
    "grad_clip_norm": 5.0,
    "init_scale": 0.1,
    # detect
    "model": None,
    "lambda": None,
    "sigma": None,
    "kernel_scale": 6.0,
    "burn_in": 2,
    "strict_peak": False,
    "threshold_on": "raw",
    # eval / covtest
    "reports": None,
    "lag_samples": 0,
    "lag_seconds": None,
    "tr": None,
    "sweep": False,
    "lambdas": "0,0.5,1",
    "sigmas": "1,2,4,8",
    "method": "permutation",
    "permutations": 1000,
    # shared
    "seed": 0,
    "data": None,
    "out": None,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path)
    common.add_argument("--data", type=Path)

    det = _Parser(add_help=False)
    det.add_argument("--preset", choices=sorted(detector.DETECTION_PRESETS))
    det.add_argument("--lambda", dest="lambda", type=float)
    det.add_argument("--sigma", type=float)
    det.add_argument("--kernel-scale", type=float)
    det.add_argument("--burn-in", type=int)
    det.add_argument("--strict-peak", action="store_const", const=True)
    det.add_argument("--threshold-on", choices=["raw", "smoothed"])

    parser = _Parser(prog="statetrace", description="Change-point detection from LSTM prediction errors.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic benchmark")
    p.add_argument("--preset", choices=["task", "rest"])
    p.add_argument("--channels", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-val", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--block", type=int)
    p.add_argument("--blocks", type=int, help="number of blocks per subject")
    p.add_argument("--jitter", type=int)
    p.add_argument("--smoothing", type=float)

    p = sub.add_parser("train", parents=[common], help="fit and save a forecaster")
    p.add_argument("--split")
    p.add_argument("--architecture", choices=sorted(forecaster.ARCHITECTURE_PRESETS))
    p.add_argument("--hidden", help="comma-separated hidden sizes, overrides --architecture")
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--bptt-window", type=int)
    p.add_argument("--grad-clip-norm", type=float)
    p.add_argument("--init-scale", type=float)

    p = sub.add_parser("detect", parents=[common, det], help="write one change-point report per subject")
    p.add_argument("--model", type=Path)
    p.add_argument("--split")

    p = sub.add_parser("eval", parents=[common, det], help="score reports, or sweep (lambda, sigma)")
    p.add_argument("--reports", type=Path)
    p.add_argument("--split")
    p.add_argument("--lag-samples", type=int)
    p.add_argument("--lag-seconds", type=float)
    p.add_argument("--tr", type=float)
    p.add_argument("--sweep", action="store_const", const=True)
    p.add_argument("--model", type=Path)
    p.add_argument("--lambdas")
    p.add_argument("--sigmas")

    p = sub.add_parser("covtest", parents=[common], help="test adjacent segments for covariance change")
    p.add_argument("--reports", type=Path)
    p.add_argument("--split")
    p.add_argument("--method", choices=["asymptotic", "permutation"])
    p.add_argument("--permutations", type=int)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults < config file < command-line flags."""
    cfg = dict(DEFAULTS)
    if args.config is not None:
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise StatetraceError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise StatetraceError("config file must hold a JSON object")
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(doc)
    for key, value in vars(args).items():
        if value is not None:
            cfg[key] = value
    cfg["command"] = args.command
    return cfg


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _subjects(cfg: dict) -> list[synth.Subject]:
    """Subjects from a benchmark directory (manifest.json) or a single CSV file."""
    data = Path(cfg["data"])
    if data.is_file():
        return [synth.Subject(read_csv(data), [], "", 0)]
    return synth.read_benchmark(data, cfg.get("split"))


def _detection_config(cfg: dict) -> detector.DetectionConfig:
    if cfg["preset"] not in detector.DETECTION_PRESETS:
        raise UsageError(f"unknown preset {cfg['preset']!r}")
    preset = detector.DETECTION_PRESETS[cfg["preset"]]
    return detector.DetectionConfig(
        lam=preset.lam if cfg["lambda"] is None else float(cfg["lambda"]),
        sigma=preset.sigma if cfg["sigma"] is None else float(cfg["sigma"]),
        kernel_scale=float(cfg["kernel_scale"]),
        burn_in=int(cfg["burn_in"]),
        strict_peak=bool(cfg["strict_peak"]),
        threshold_on=cfg["threshold_on"],
    )


def cmd_synth(cfg: dict) -> None:
    _require(cfg, "out")
    kwargs = {key: int(cfg[name]) for key, name in (("k", "channels"), ("block", "block"), ("jitter", "jitter"), ("n_blocks", "blocks")) if cfg[name] is not None}
    design = synth.rest_design(**kwargs) if cfg["preset"] == "rest" else synth.task_design(**kwargs)
    if cfg["smoothing"]:
        design.temporal_smoothing = float(cfg["smoothing"])
    bench = design.benchmark(int(cfg["n_train"]), int(cfg["n_val"]), int(cfg["n_test"]), master_seed=int(cfg["seed"]))
    path = synth.write_benchmark(bench, cfg["out"], forecaster.write_atomic)
    log.info("wrote %d subjects, manifest %s", sum(len(v) for v in bench.values()), path)


def cmd_train(cfg: dict) -> None:
    _require(cfg, "data", "out")
    if cfg.get("split") is None:
        cfg["split"] = "train"
    subjects = _subjects(cfg)
    if cfg["hidden"]:
        hidden = tuple(int(v) for v in str(cfg["hidden"]).split(","))
    else:
        hidden = forecaster.ARCHITECTURE_PRESETS[cfg["architecture"]]
    tcfg = forecaster.TrainConfig(
        learning_rate=float(cfg["learning_rate"]), epochs=int(cfg["epochs"]),
        bptt_window=int(cfg["bptt_window"]), batch_size=int(cfg["batch_size"]),
        seed=int(cfg["seed"]), grad_clip_norm=float(cfg["grad_clip_norm"]), init_scale=float(cfg["init_scale"]),
    )
    model, curve = forecaster.train([s.data for s in subjects], hidden, tcfg)
    out = Path(cfg["out"])
    forecaster.save_model(model, out / "model.json")
    lines = ["epoch,loss"] + [f"{i + 1},{v!r}" for i, v in enumerate(curve)]
    forecaster.write_atomic(out / "loss_curve.csv", "\n".join(lines) + "\n")
    log.info("trained on %d subjects; final loss %.6f", len(subjects), curve[-1])


def cmd_detect(cfg: dict) -> None:
    _require(cfg, "data", "model", "out")
    if cfg.get("split") is None:
        cfg["split"] = "test"
    dcfg = _detection_config(cfg)
    model = forecaster.load_model(cfg["model"])
    subjects = _subjects(cfg)
    reports = detector.run_detection_many([s.data for s in subjects], model, dcfg)
    out = Path(cfg["out"])
    rows = ["subject_id,threshold,n_change_points,change_points"]
    for rep in reports:
        forecaster.write_atomic(out / f"{rep.subject_id}.json", rep.to_json())
        rows.append(f"{rep.subject_id},{rep.threshold!r},{len(rep.change_points)},{' '.join(map(str, rep.change_points))}")
    forecaster.write_atomic(out / "change_points.csv", "\n".join(rows) + "\n")
    log.info("detected with lambda=%g sigma=%g on %d subjects", dcfg.lam, dcfg.sigma, len(reports))


def _load_reports(directory: Path, subjects) -> list[detector.ChangePointReport]:
    reports = []
    for s in subjects:
        path = Path(directory) / f"{s.data.subject_id}.json"
        try:
            with open(path, encoding="utf-8") as fh:
                reports.append(detector.ChangePointReport.from_dict(json.load(fh)))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise StatetraceError(f"cannot read report {path}: {exc}") from None
    return reports


def cmd_eval(cfg: dict) -> None:
    _require(cfg, "data", "out")
    out = Path(cfg["out"])
    if cfg["sweep"]:
        _require(cfg, "model")
        if cfg.get("split") is None:
            cfg["split"] = "val"
        model = forecaster.load_model(cfg["model"])
        subjects = _subjects(cfg)
        rows = evaluation.parameter_sweep(
            [(s.data, s.change_points) for s in subjects], model,
            _floats(cfg["lambdas"]), _floats(cfg["sigmas"]), _detection_config(cfg),
        )
        forecaster.write_atomic(out / "sweep.csv", evaluation.format_sweep_csv(rows))
        best = evaluation.best_setting(rows)
        log.info("best setting lambda=%g sigma=%g", best.lam, best.sigma)
        return

    _require(cfg, "reports")
    if cfg.get("split") is None:
        cfg["split"] = "test"
    subjects = _subjects(cfg)
    lag = int(cfg["lag_samples"])
    if cfg["lag_seconds"] is not None:
        _require(cfg, "tr")
        lag = evaluation.lag_seconds_to_samples(float(cfg["lag_seconds"]), float(cfg["tr"]))
    reports = _load_reports(cfg["reports"], subjects)
    per_subject, scored, failed = {}, [], 0
    for s, rep in zip(subjects, reports):
        real, flags = evaluation.apply_lag(s.change_points, lag, s.data.n_time)
        try:
            res = evaluation.detection_errors(real, rep.change_points)
        except NoDetectionsError:
            failed += 1
            per_subject[rep.subject_id] = {"error": "no detections"}
            continue
        scored.append(res)
        per_subject[rep.subject_id] = dict(res.to_dict(), lag_clamped=flags)
    doc = {
        "lag_samples": lag,
        "n_subjects": len(subjects),
        "n_failed": failed,
        "mean_error_sen": float(np.mean([r.error_sen for r in scored])) if scored else None,
        "mean_error_spec": float(np.mean([r.error_spec for r in scored])) if scored else None,
        "subjects": per_subject,
    }
    forecaster.write_atomic(out / "eval.json", json.dumps(doc, indent=1))
    log.info("mean error_sen=%s error_spec=%s (%d without detections)", doc["mean_error_sen"], doc["mean_error_spec"], failed)


def cmd_covtest(cfg: dict) -> None:
    _require(cfg, "data", "reports", "out")
    if cfg.get("split") is None:
        cfg["split"] = "test"
    subjects = _subjects(cfg)
    reports = _load_reports(cfg["reports"], subjects)
    out = Path(cfg["out"])
    for s, rep in zip(subjects, reports):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", evaluation.SegmentWarning)
            tests = evaluation.adjacent_segment_tests(
                s.data, rep.change_points, method=cfg["method"],
                n_permutations=int(cfg["permutations"]), seed=int(cfg["seed"]),
            )
        doc = {"subject_id": rep.subject_id, "tests": tests, "warnings": [str(w.message) for w in caught]}
        forecaster.write_atomic(out / f"{rep.subject_id}.json", json.dumps(doc, indent=1))


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "detect": cmd_detect, "eval": cmd_eval, "covtest": cmd_covtest}


def run_cli(argv: list[str] | None = None) -> int:
    level = os.environ.get("STATETRACE_LOG", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve(args)
        COMMANDS[cfg["command"]](cfg)
    except UsageError as exc:
        print(f"statetrace: usage error: {exc}", file=sys.stderr)
        return 1
    except (StatetraceError, OSError) as exc:
        print(f"statetrace: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
