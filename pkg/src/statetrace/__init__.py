"""Change-point detection on multivariate time courses via LSTM forecasting residuals."""

from .detector import REST_PRESET, TASK_PRESET, ChangePointReport, DetectionConfig, run_detection
from .errors import StatetraceError
from .evaluation import cov_two_sample_test, detection_errors, segment_connectivity
from .forecaster import FULL_SCALE, ForecastModel, TrainConfig, load_model, save_model, train
from .numerics import TimeCourses

__all__ = [
    "ChangePointReport",
    "DetectionConfig",
    "ForecastModel",
    "FULL_SCALE",
    "REST_PRESET",
    "StatetraceError",
    "TASK_PRESET",
    "TimeCourses",
    "TrainConfig",
    "cov_two_sample_test",
    "detection_errors",
    "load_model",
    "run_detection",
    "save_model",
    "segment_connectivity",
    "train",
]
