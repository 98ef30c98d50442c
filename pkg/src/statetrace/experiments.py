"""Desk-scale reproductions of the task and resting-state experiments.

Both runners are deterministic in ``master_seed`` and return plain dataclasses
so scripts and tests can print or assert on them.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import synth
from .detector import REST_PRESET, DetectionConfig, run_detection_many
from .evaluation import (
    SegmentWarning,
    SweepRow,
    adjacent_segment_tests,
    best_setting,
    detection_errors,
    evaluate_reports,
    parameter_sweep,
)
from .forecaster import DESK_SCALE, ForecastModel, TrainConfig, train
from .numerics import make_rng

log = logging.getLogger(__name__)

SELECTION_LAMBDAS = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
TREND_LAMBDAS = (0.0, 0.5, 1.0)
SIGMAS = (1.0, 2.0, 4.0, 8.0)


def random_baseline(
    truths: list[list[int]], n_pred: list[int], n_times: list[int], n_seeds: int = 100, seed: int = 0
) -> tuple[float, float]:
    """Mean (error_sen, error_spec) of detectors that drop ``n_pred`` points uniformly in 2..T."""
    sen, spec = [], []
    for s in range(n_seeds):
        rng = make_rng(seed, s)
        for real, n, T in zip(truths, n_pred, n_times):
            n = max(1, n)
            pred = np.sort(rng.choice(np.arange(2, T + 1), size=min(n, T - 1), replace=False))
            res = detection_errors(real, pred.tolist())
            sen.append(res.error_sen)
            spec.append(res.error_spec)
    return float(np.mean(sen)), float(np.mean(spec))


@dataclass
class TaskResult:
    model: ForecastModel
    loss_curve: list[float]
    selection: list[SweepRow]
    chosen: SweepRow
    test_error_sen: float
    test_error_spec: float
    test_failed: int
    baseline_error_sen: float
    baseline_error_spec: float
    trend_sen: list[float]
    trend_spec: list[float]
    seconds: float


def run_task_benchmark(
    master_seed: int = 0,
    n_train: int = 40,
    n_val: int = 5,
    n_test: int = 10,
    hidden_dims=DESK_SCALE,
    train_cfg: TrainConfig | None = None,
) -> TaskResult:
    """Train on the task analog, pick (lambda, sigma) on validation, score the test split."""
    t0 = time.perf_counter()
    design = synth.task_design()
    bench = design.benchmark(n_train, n_val, n_test, master_seed=master_seed)
    cfg = train_cfg or TrainConfig(learning_rate=3e-3, epochs=40, seed=master_seed)
    model, curve = train([s.data for s in bench["train"]], hidden_dims, cfg)

    val = [(s.data, s.change_points) for s in bench["val"]]
    selection = parameter_sweep(val, model, SELECTION_LAMBDAS, SIGMAS)
    chosen = best_setting(selection)
    trend_rows = [r for r in selection if r.lam in TREND_LAMBDAS]
    trend_sen = [float(np.nanmean([r.error_sen for r in trend_rows if r.sigma == s])) for s in SIGMAS]
    trend_spec = [float(np.nanmean([r.error_spec for r in trend_rows if r.sigma == s])) for s in SIGMAS]

    test = bench["test"]
    reports = run_detection_many([s.data for s in test], model, DetectionConfig(lam=chosen.lam, sigma=chosen.sigma))
    results, failed = evaluate_reports(reports, [s.change_points for s in test])
    base_sen, base_spec = random_baseline(
        [s.change_points for s in test],
        [len(r.change_points) for r in reports],
        [s.data.n_time for s in test],
        seed=master_seed,
    )
    return TaskResult(
        model=model,
        loss_curve=curve,
        selection=selection,
        chosen=chosen,
        test_error_sen=float(np.mean([r.error_sen for r in results])) if results else float("nan"),
        test_error_spec=float(np.mean([r.error_spec for r in results])) if results else float("nan"),
        test_failed=failed,
        baseline_error_sen=base_sen,
        baseline_error_spec=base_spec,
        trend_sen=trend_sen,
        trend_spec=trend_spec,
        seconds=time.perf_counter() - t0,
    )


@dataclass
class RestResult:
    model: ForecastModel
    n_pairs: int
    n_rejected: int
    per_subject: list[dict] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def rejection_rate(self) -> float:
        return self.n_rejected / self.n_pairs if self.n_pairs else float("nan")


def run_rest_validation(
    master_seed: int = 0,
    n_train: int = 40,
    n_test: int = 10,
    hidden_dims=DESK_SCALE,
    train_cfg: TrainConfig | None = None,
    cfg: DetectionConfig = REST_PRESET,
    alpha: float = 0.05,
    n_permutations: int = 1000,
) -> RestResult:
    """Detect on regime-switching data and test every adjacent segment pair."""
    t0 = time.perf_counter()
    design = synth.rest_design()
    bench = design.benchmark(n_train, 1, n_test, master_seed=master_seed)
    tcfg = train_cfg or TrainConfig(learning_rate=3e-3, epochs=20, seed=master_seed)
    model, _ = train([s.data for s in bench["train"]], hidden_dims, tcfg)
    test = bench["test"]
    reports = run_detection_many([s.data for s in test], model, cfg)
    n_pairs = n_rej = 0
    per_subject = []
    for i, (subj, rep) in enumerate(zip(test, reports)):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SegmentWarning)
            tests = adjacent_segment_tests(
                subj.data, rep.change_points, n_permutations=n_permutations, seed=master_seed * 1000 + i
            )
        rejected = sum(t["p_value"] < alpha for t in tests)
        n_pairs += len(tests)
        n_rej += rejected
        per_subject.append(
            {"subject_id": subj.data.subject_id, "truth": subj.change_points,
             "detected": rep.change_points, "pairs": len(tests), "rejected": rejected}
        )
    return RestResult(model, n_pairs, n_rej, per_subject, time.perf_counter() - t0)
