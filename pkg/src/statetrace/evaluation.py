"""Scoring detections against ground truth and testing segment connectivity.

Distances are in samples. Segments follow the convention that a change point
opens a new segment: cut points ``c1 < c2 < ...`` over 1-based times ``1..T``
give ``[1, c1), [c1, c2), ..., [cm, T]``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .detector import DetectionConfig, report_from_errors, prediction_error
from .errors import DegenerateSegmentationError, InvalidArgumentError, NoDetectionsError
from .forecaster import ForecastModel, predict_many
from .numerics import TimeCourses, derive_seed, make_rng

log = logging.getLogger(__name__)


class SegmentWarning(UserWarning):
    """A segment was too short to use and has been skipped."""


@dataclass
class EvalResult:
    error_sen: float
    error_spec: float
    n_real: int
    n_pred: int
    sen_distances: list[float] = field(default_factory=list)
    spec_distances: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CovTestResult:
    statistic: float
    p_value: float
    method: str
    argmax_entry: tuple[int, int]
    n_permutations: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["argmax_entry"] = list(self.argmax_entry)
        return d


def _nearest_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    return np.min(np.abs(src[:, None] - dst[None, :]), axis=1).astype(np.float64)


def detection_errors(real_cps: Sequence[int], pred_cps: Sequence[int]) -> EvalResult:
    """Mean nearest-neighbour distance real->predicted (sen) and predicted->real (spec)."""
    real = np.asarray(sorted(real_cps), dtype=np.int64)
    pred = np.asarray(sorted(pred_cps), dtype=np.int64)
    if real.size == 0:
        raise InvalidArgumentError("real change points must be non-empty")
    if pred.size == 0:
        raise NoDetectionsError("no change points were predicted; error_sen/error_spec undefined")
    sen = _nearest_distances(real, pred)
    spec = _nearest_distances(pred, real)
    return EvalResult(
        error_sen=float(sen.mean()),
        error_spec=float(spec.mean()),
        n_real=int(real.size),
        n_pred=int(pred.size),
        sen_distances=sen.tolist(),
        spec_distances=spec.tolist(),
    )


def lag_seconds_to_samples(lag_seconds: float, tr: float) -> int:
    if not tr > 0:
        raise InvalidArgumentError("TR must be positive")
    return int(round(lag_seconds / tr))


def apply_lag(real_cps: Sequence[int], lag_samples: int, n_time: int | None = None):
    """Shift change points by ``lag_samples``; returns ``(shifted, clamped_flags)``.

    With ``n_time`` given, points pushed past ``T`` are clamped to ``T`` and
    flagged.
    """
    shifted, flags = [], []
    for c in real_cps:
        s = int(c) + int(lag_samples)
        clamped = n_time is not None and s > n_time
        shifted.append(int(n_time) if clamped else s)
        flags.append(bool(clamped))
    return shifted, flags


def segment_bounds(n_time: int, cps: Sequence[int], min_length: int):
    """0-based half-open ``(start, stop)`` bounds of usable segments, plus skipped ones."""
    cuts = [int(c) for c in sorted(set(cps)) if 1 < c <= n_time]
    edges = [1] + cuts + [n_time + 1]
    usable, skipped = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        (usable if b - a >= min_length else skipped).append((a - 1, b - 1))
    return usable, skipped


def pearson(seg: np.ndarray) -> np.ndarray:
    """Channel correlation matrix; constant channels get zero off-diagonal entries."""
    centered = seg - seg.mean(axis=0)
    norms = np.sqrt(np.sum(centered * centered, axis=0))
    safe = np.where(norms > 0, norms, 1.0)
    z = centered / safe
    corr = z.T @ z
    corr[:, norms == 0] = 0.0
    corr[norms == 0, :] = 0.0
    corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


def segment_connectivity(U: TimeCourses, cps: Sequence[int], min_length: int = 3) -> list[np.ndarray]:
    """Pearson connectivity matrix of every segment between consecutive change points.

    Segments shorter than ``min_length`` are dropped with a ``SegmentWarning``.
    """
    usable, skipped = segment_bounds(U.n_time, cps, min_length)
    for a, b in skipped:
        warnings.warn(f"{U.subject_id}: segment [{a + 1}, {b + 1}) shorter than {min_length}, skipped", SegmentWarning)
    if len(usable) < 2:
        raise DegenerateSegmentationError(f"{U.subject_id}: fewer than 2 usable segments")
    return [pearson(U.data[a:b]) for a, b in usable]


# ---------------------------------------------------------------------------
# max-type two-sample covariance test


def _cov_moments(X: np.ndarray, iu):
    """Per-entry covariance and cross-product variance over the last-but-one axis.

    ``X`` is ``(..., n, K)``; returns sigma, theta each ``(..., n_pairs)``.
    """
    n = X.shape[-2]
    c = X - X.mean(axis=-2, keepdims=True)
    cT = np.swapaxes(c, -1, -2)
    sigma = (cT @ c)[..., iu[0], iu[1]] / n
    c2 = c * c
    fourth = (np.swapaxes(c2, -1, -2) @ c2)[..., iu[0], iu[1]] / n
    # theta = mean((c_i c_j - sigma_ij)^2) expanded; clip rounding below zero
    theta = np.maximum(fourth - sigma * sigma, 0.0)
    return sigma, theta


def _max_statistic(sa, ta, na, sb, tb, nb):
    num = (sa - sb) ** 2
    den = ta / na + tb / nb
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))
    return z


def asymptotic_p_value(statistic: float, K: int) -> float:
    """Upper tail of the Gumbel-type limit of the max statistic with K variables."""
    x = statistic - 4.0 * math.log(K) + math.log(math.log(K))
    cdf = math.exp(-math.exp(-x / 2.0) / math.sqrt(8.0 * math.pi))
    return min(1.0, max(0.0, 1.0 - cdf))


def cov_two_sample_test(
    seg_a,
    seg_b,
    method: str = "permutation",
    n_permutations: int = 1000,
    seed: int = 0,
    batch: int = 250,
) -> CovTestResult:
    """Test equality of two covariance matrices with the max standardized entry difference.

    ``method="asymptotic"`` uses the extreme-value null; ``"permutation"`` pools
    the rows and reshuffles them ``n_permutations`` times, giving the fraction
    of permuted statistics at least as large as the observed one.
    """
    A = np.asarray(seg_a, dtype=np.float64)
    B = np.asarray(seg_b, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise InvalidArgumentError("segments must be 2-D with the same number of channels")
    n1, K = A.shape
    n2 = B.shape[0]
    if n1 < 5 or n2 < 5:
        raise InvalidArgumentError(f"segments need >= 5 rows, got {n1} and {n2}")
    if K < 2:
        raise InvalidArgumentError("covariance test needs K >= 2")
    if method not in ("asymptotic", "permutation"):
        raise InvalidArgumentError(f"unknown method {method!r}")

    iu = np.triu_indices(K)
    sa, ta = _cov_moments(A, iu)
    sb, tb = _cov_moments(B, iu)
    z = _max_statistic(sa, ta, n1, sb, tb, n2)
    best = int(np.argmax(z))
    m_obs = float(z[best])
    entry = (int(iu[0][best]), int(iu[1][best]))

    if method == "asymptotic":
        return CovTestResult(m_obs, asymptotic_p_value(m_obs, K), method, entry)

    if n_permutations < 1:
        raise InvalidArgumentError("n_permutations must be >= 1")
    pooled = np.concatenate([A, B], axis=0)
    rng = make_rng(seed)
    exceed = 0
    done = 0
    while done < n_permutations:
        m = min(batch, n_permutations - done)
        perms = np.argsort(rng.random((m, n1 + n2)), axis=1)
        X = pooled[perms]
        s1, t1 = _cov_moments(X[:, :n1], iu)
        s2, t2 = _cov_moments(X[:, n1:], iu)
        stats = _max_statistic(s1, t1, n1, s2, t2, n2).max(axis=1)
        exceed += int(np.sum(stats >= m_obs))
        done += m
    return CovTestResult(m_obs, exceed / n_permutations, method, entry, n_permutations)


def adjacent_segment_tests(
    U: TimeCourses,
    cps: Sequence[int],
    method: str = "permutation",
    n_permutations: int = 1000,
    seed: int = 0,
    min_length: int = 5,
) -> list[dict]:
    """Covariance test between each pair of consecutive usable segments."""
    usable, skipped = segment_bounds(U.n_time, cps, min_length)
    for a, b in skipped:
        warnings.warn(f"{U.subject_id}: segment [{a + 1}, {b + 1}) shorter than {min_length}, skipped", SegmentWarning)
    out = []
    for i, ((a0, a1), (b0, b1)) in enumerate(zip(usable[:-1], usable[1:])):
        res = cov_two_sample_test(
            U.data[a0:a1], U.data[b0:b1], method=method, n_permutations=n_permutations,
            seed=derive_seed(seed, i),
        )
        d = res.to_dict()
        d.update(segment_a=[a0 + 1, a1 + 1], segment_b=[b0 + 1, b1 + 1])
        out.append(d)
    return out


# ---------------------------------------------------------------------------
# parameter sweep


@dataclass
class SweepRow:
    lam: float
    sigma: float
    error_sen: float
    error_spec: float
    n_failed: int


def evaluate_reports(reports, truths) -> tuple[list[EvalResult], int]:
    """Score each report; subjects without detections are counted, not scored."""
    results, failed = [], 0
    for rep, real in zip(reports, truths):
        try:
            results.append(detection_errors(real, rep.change_points))
        except NoDetectionsError:
            failed += 1
    return results, failed


def sweep_errors(
    errors: Sequence[tuple[str, np.ndarray, Sequence[int]]],
    lambdas: Sequence[float],
    sigmas: Sequence[float],
    base: DetectionConfig | None = None,
) -> list[SweepRow]:
    """Grid over (lambda, sigma) given precomputed ``(subject_id, errors, real_cps)``."""
    if not lambdas or not sigmas:
        raise InvalidArgumentError("sweep grids must be non-empty")
    base = base or DetectionConfig()
    rows = []
    for lam in lambdas:
        for sigma in sigmas:
            cfg = DetectionConfig(
                lam=lam, sigma=sigma, kernel_scale=base.kernel_scale, burn_in=base.burn_in,
                strict_peak=base.strict_peak, threshold_on=base.threshold_on,
            )
            reports = [report_from_errors(sid, e, cfg) for sid, e, _ in errors]
            results, failed = evaluate_reports(reports, [real for _, _, real in errors])
            sen = float(np.mean([r.error_sen for r in results])) if results else float("nan")
            spec = float(np.mean([r.error_spec for r in results])) if results else float("nan")
            rows.append(SweepRow(float(lam), float(sigma), sen, spec, failed))
    return rows


def parameter_sweep(
    validation: Sequence[tuple[TimeCourses, Sequence[int]]],
    model: ForecastModel,
    lambdas: Sequence[float],
    sigmas: Sequence[float],
    base: DetectionConfig | None = None,
) -> list[SweepRow]:
    """Mean error_sen / error_spec over validation subjects for every grid point.

    Predictions do not depend on (lambda, sigma), so the model runs once.
    """
    subjects = [u for u, _ in validation]
    preds = predict_many(model, subjects)
    errors = [(u.subject_id, prediction_error(u, p), real) for (u, real), p in zip(validation, preds)]
    return sweep_errors(errors, lambdas, sigmas, base)


def best_setting(rows: Sequence[SweepRow]) -> SweepRow:
    """Grid point minimizing error_sen + error_spec (ties: fewer failures, then grid order)."""
    scored = [r for r in rows if np.isfinite(r.error_sen) and np.isfinite(r.error_spec)]
    if not scored:
        raise NoDetectionsError("no grid point produced any detections")
    return min(scored, key=lambda r: (r.error_sen + r.error_spec, r.n_failed))


def format_sweep_csv(rows: Sequence[SweepRow]) -> str:
    lines = ["lambda,sigma,error_sen,error_spec,n_failed"]
    lines.extend(f"{r.lam!r},{r.sigma!r},{r.error_sen!r},{r.error_spec!r},{r.n_failed}" for r in rows)
    return "\n".join(lines) + "\n"
