"""Numeric substrate: seeded randomness, Gaussian kernels, 1-D convolution, CSV I/O.

Matrices are plain ``float64`` numpy arrays. Random streams are numpy
``Generator`` objects backed by PCG64 and seeded through ``SeedSequence``,
so a (seed, key) pair yields the same draws on every platform numpy supports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """PCG64 stream for ``seed``; ``key`` derives independent child streams.

    ``make_rng(s, 3)`` and ``make_rng(s, 4)`` are statistically independent and
    both fully determined by ``s``.
    """
    if seed < 0:
        raise InvalidArgumentError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *key: int) -> int:
    """63-bit integer seed derived deterministically from ``seed`` and ``key``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> np.uint64(1))


def as_matrix(values, name: str = "matrix") -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class TimeCourses:
    """One subject's T x K matrix of functional profiles (rows are time points)."""

    subject_id: str
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = as_matrix(self.data, "time courses")
        if arr.shape[0] < 2 or arr.shape[1] < 1:
            raise InvalidArgumentError(
                f"time courses need T >= 2 and K >= 1, got shape {arr.shape}"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def n_time(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]


def gaussian_kernel(std_samples: float) -> np.ndarray:
    """Normalized Gaussian weights at integer offsets, truncated at radius ceil(3*std)."""
    if not std_samples > 0 or not math.isfinite(std_samples):
        raise InvalidArgumentError(f"kernel std must be positive, got {std_samples}")
    radius = max(1, math.ceil(3.0 * std_samples))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-(x**2) / (2.0 * std_samples**2))
    return w / w.sum()


def convolve_same(signal, kernel) -> np.ndarray:
    """Same-length convolution of ``signal`` with an odd-length ``kernel``.

    Edges use half-sample symmetric padding (``d c b a | a b c d``), so the
    boundary sample is repeated once before reflecting.
    """
    x = np.asarray(signal, dtype=np.float64)
    w = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise InvalidArgumentError("signal must be a non-empty 1-D sequence")
    if w.ndim != 1 or w.size % 2 == 0:
        raise InvalidArgumentError(f"kernel must have odd length, got {w.size}")
    r = w.size // 2
    padded = np.pad(x, r, mode="symmetric")
    out = np.zeros_like(x)
    for k in range(w.size):
        out += w[k] * padded[k : k + x.size]
    return out


def read_csv(path, subject_id: str | None = None) -> TimeCourses:
    """Load a T x K CSV; a non-numeric first row is treated as a header."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise InvalidArgumentError(f"{path}: empty CSV")
    try:
        [float(v) for v in lines[0].split(",")]
    except ValueError:
        lines = lines[1:]
    try:
        rows = [[float(v) for v in ln.split(",")] for ln in lines]
    except ValueError as exc:
        raise InvalidArgumentError(f"{path}: non-numeric value ({exc})") from None
    if len({len(r) for r in rows}) > 1:
        raise InvalidArgumentError(f"{path}: ragged rows")
    return TimeCourses(subject_id or path.stem, np.array(rows, dtype=np.float64))


def format_csv(tc: TimeCourses, header: bool = True) -> str:
    lines = []
    if header:
        lines.append(",".join(f"ch{j}" for j in range(tc.n_channels)))
    lines.extend(",".join(repr(float(v)) for v in row) for row in tc.data)
    return "\n".join(lines) + "\n"
