"""Change points from one-step prediction errors.

Pipeline per subject: predicted profiles -> per-time error norm -> adaptive
threshold -> Gaussian smoothing -> supra-threshold local maxima.

Error sequences are stored 0-based but describe time points ``t = 2..T``
(1-based); ``errors[i]`` belongs to ``t = i + 2``. Change points are always
reported in 1-based time coordinates.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .forecaster import ForecastModel, predict_many, predict_profiles
from .numerics import TimeCourses, convolve_same, gaussian_kernel

#: Offset between an error-array index and its 1-based time point.
FIRST_TIME = 2


@dataclass(frozen=True)
class DetectionConfig:
    """Detection parameters.

    ``kernel_scale / sigma`` is the smoothing kernel std in samples, so a larger
    ``sigma`` means a narrower kernel. ``threshold_on`` selects whether the
    supra-threshold test uses the raw errors (default) or the smoothed ones.
    ``strict_peak=False`` accepts the leftmost sample of a flat-topped peak;
    ``True`` requires a strict fall after the peak as well.
    """

    lam: float = 0.0
    sigma: float = 6.0
    kernel_scale: float = 6.0
    burn_in: int = 2
    strict_peak: bool = False
    threshold_on: str = "raw"

    def __post_init__(self):
        if not np.isfinite(self.lam):
            raise InvalidArgumentError("lambda must be finite")
        if not self.sigma > 0:
            raise InvalidArgumentError(f"sigma must be > 0, got {self.sigma}")
        if not self.kernel_scale > 0:
            raise InvalidArgumentError(f"kernel_scale must be > 0, got {self.kernel_scale}")
        if self.burn_in < FIRST_TIME:
            raise InvalidArgumentError(f"burn_in must be >= 2, got {self.burn_in}")
        if self.threshold_on not in ("raw", "smoothed"):
            raise InvalidArgumentError("threshold_on must be 'raw' or 'smoothed'")

    @property
    def kernel_std(self) -> float:
        return self.kernel_scale / self.sigma


TASK_PRESET = DetectionConfig(lam=0.0, sigma=6.0)
REST_PRESET = DetectionConfig(lam=1.0, sigma=3.0)
DETECTION_PRESETS = {"task": TASK_PRESET, "rest": REST_PRESET}


@dataclass
class ChangePointReport:
    subject_id: str
    errors: np.ndarray
    smoothed: np.ndarray
    threshold: float
    anomaly: np.ndarray
    change_points: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "subject_id": self.subject_id,
            "threshold": float(self.threshold),
            "errors": [float(v) for v in self.errors],
            "smoothed": [float(v) for v in self.smoothed],
            "anomaly": [int(v) for v in self.anomaly],
            "change_points": [int(c) for c in self.change_points],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "ChangePointReport":
        return cls(
            subject_id=doc["subject_id"],
            errors=np.array(doc["errors"], dtype=np.float64),
            smoothed=np.array(doc["smoothed"], dtype=np.float64),
            threshold=float(doc["threshold"]),
            anomaly=np.array(doc["anomaly"], dtype=np.int8),
            change_points=[int(c) for c in doc["change_points"]],
        )


def prediction_error(U: TimeCourses, predicted) -> np.ndarray:
    """Euclidean norm of ``U(t) - predicted(t)`` for ``t = 2..T``."""
    pred = np.asarray(predicted, dtype=np.float64)
    target = U.data[1:]
    if pred.shape != target.shape:
        raise InvalidArgumentError(f"predicted shape {pred.shape} != expected {target.shape}")
    return np.sqrt(np.sum((target - pred) ** 2, axis=1))


def threshold(errors, lam: float) -> float:
    """mean + lam * std, with the population (divide-by-N) std."""
    e = np.asarray(errors, dtype=np.float64)
    if e.size < 2:
        raise InvalidArgumentError("threshold needs at least two error values")
    return float(e.mean() + lam * e.std())


def anomaly_mask(errors, level: float) -> np.ndarray:
    return (np.asarray(errors) > level).astype(np.int8)


def smooth_errors(errors, cfg: DetectionConfig) -> np.ndarray:
    return convolve_same(errors, gaussian_kernel(cfg.kernel_std))


def detect_change_points(errors, smoothed, level: float, cfg: DetectionConfig) -> list[int]:
    """1-based time points that are supra-threshold local maxima of ``smoothed``."""
    e = np.asarray(errors, dtype=np.float64)
    s = np.asarray(smoothed, dtype=np.float64)
    if e.shape != s.shape:
        raise InvalidArgumentError("errors and smoothed errors differ in length")
    if s.size < 3:
        return []
    tested = e if cfg.threshold_on == "raw" else s
    mid = s[1:-1]
    rise = s[:-2] < mid
    fall = mid > s[2:] if cfg.strict_peak else mid >= s[2:]
    ok = rise & fall & (tested[1:-1] > level)
    idx = np.nonzero(ok)[0] + 1
    times = idx + FIRST_TIME
    return [int(t) for t in times if t >= cfg.burn_in]


def report_from_predictions(U: TimeCourses, predicted, cfg: DetectionConfig) -> ChangePointReport:
    errors = prediction_error(U, predicted)
    return report_from_errors(U.subject_id, errors, cfg)


def report_from_errors(subject_id: str, errors, cfg: DetectionConfig) -> ChangePointReport:
    errors = np.asarray(errors, dtype=np.float64)
    level = threshold(errors, cfg.lam)
    smoothed = smooth_errors(errors, cfg)
    mask = anomaly_mask(errors if cfg.threshold_on == "raw" else smoothed, level)
    cps = detect_change_points(errors, smoothed, level, cfg)
    return ChangePointReport(subject_id, errors, smoothed, level, mask, cps)


def run_detection(U: TimeCourses, model: ForecastModel, cfg: DetectionConfig = TASK_PRESET) -> ChangePointReport:
    return report_from_predictions(U, predict_profiles(model, U), cfg)


def run_detection_many(subjects, model: ForecastModel, cfg: DetectionConfig = TASK_PRESET) -> list[ChangePointReport]:
    preds = predict_many(model, subjects)
    return [report_from_predictions(U, p, cfg) for U, p in zip(subjects, preds)]
