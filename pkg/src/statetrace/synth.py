"""Piecewise-stationary multivariate series with known change points.

A paradigm is an ordered list of (state label, duration) blocks. Each state is
either i.i.d. Gaussian or a stable VAR(1) process around a mean; VAR blocks
start from their stationary distribution so only block boundaries are changes.
The first sample of every new block is a ground-truth change point (1-based).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import solve_discrete_lyapunov

from .errors import InvalidArgumentError
from .numerics import TimeCourses, convolve_same, derive_seed, format_csv, gaussian_kernel, make_rng, read_csv

MIN_BLOCK = 5


def _cholesky(cov: np.ndarray, label: str) -> np.ndarray:
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1] or not np.allclose(cov, cov.T):
        raise InvalidArgumentError(f"state {label!r}: covariance must be a symmetric square matrix")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise InvalidArgumentError(f"state {label!r}: covariance is not positive definite") from None


@dataclass
class StateSpec:
    """One functional state. ``var_coef=None`` gives i.i.d. Gaussian samples."""

    label: str
    mean: np.ndarray
    cov: np.ndarray
    var_coef: np.ndarray | None = None

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        k = self.mean.shape[0]
        if self.mean.ndim != 1 or self.cov.shape != (k, k):
            raise InvalidArgumentError(f"state {self.label!r}: mean/cov dimensions disagree")
        self._chol = _cholesky(self.cov, self.label)
        if self.var_coef is not None:
            self.var_coef = np.asarray(self.var_coef, dtype=np.float64)
            if self.var_coef.shape != (k, k):
                raise InvalidArgumentError(f"state {self.label!r}: VAR coefficient must be K x K")
            if np.max(np.abs(np.linalg.eigvals(self.var_coef))) >= 1.0:
                raise InvalidArgumentError(f"state {self.label!r}: VAR spectral radius must be < 1")
            stat = solve_discrete_lyapunov(self.var_coef, self.cov)
            self._stat_chol = _cholesky(0.5 * (stat + stat.T), self.label)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def stationary_cov(self) -> np.ndarray:
        if self.var_coef is None:
            return self.cov
        return self._stat_chol @ self._stat_chol.T

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        noise = rng.standard_normal((n, self.dim)) @ self._chol.T
        if self.var_coef is None:
            return self.mean + noise
        y = np.empty((n, self.dim))
        y[0] = self._stat_chol @ rng.standard_normal(self.dim)
        for t in range(1, n):
            y[t] = self.var_coef @ y[t - 1] + noise[t]
        return self.mean + y


@dataclass
class Paradigm:
    blocks: list[tuple[str, int]]

    def __post_init__(self):
        if not self.blocks:
            raise InvalidArgumentError("paradigm needs at least one block")
        for label, dur in self.blocks:
            if int(dur) < MIN_BLOCK:
                raise InvalidArgumentError(f"block {label!r} has duration {dur} < {MIN_BLOCK}")
        self.blocks = [(str(l), int(d)) for l, d in self.blocks]

    @property
    def n_time(self) -> int:
        return sum(d for _, d in self.blocks)

    @property
    def change_points(self) -> list[int]:
        out, t = [], 1
        for _, d in self.blocks[:-1]:
            t += d
            out.append(t)
        return out


def generate_subject(
    paradigm: Paradigm,
    states: dict[str, StateSpec] | Sequence[StateSpec],
    seed: int,
    temporal_smoothing: float | None = None,
    subject_id: str = "subject",
) -> tuple[TimeCourses, list[int]]:
    """Draw one subject's series; returns the data and its 1-based change points."""
    if not isinstance(states, dict):
        states = {s.label: s for s in states}
    for label, _ in paradigm.blocks:
        if label not in states:
            raise InvalidArgumentError(f"paradigm uses unknown state {label!r}")
    dims = {states[l].dim for l, _ in paradigm.blocks}
    if len(dims) != 1:
        raise InvalidArgumentError("states in one paradigm must share K")
    rng = make_rng(seed)
    data = np.concatenate([states[label].sample(dur, rng) for label, dur in paradigm.blocks], axis=0)
    if temporal_smoothing:
        w = gaussian_kernel(temporal_smoothing)
        data = np.stack([convolve_same(data[:, j], w) for j in range(data.shape[1])], axis=1)
    return TimeCourses(subject_id, data), paradigm.change_points


def jittered(paradigm: Paradigm, jitter: int, rng: np.random.Generator) -> Paradigm:
    if jitter == 0:
        return Paradigm(list(paradigm.blocks))
    return Paradigm([(l, d + int(rng.integers(-jitter, jitter + 1))) for l, d in paradigm.blocks])


@dataclass
class Subject:
    data: TimeCourses
    change_points: list[int]
    split: str
    seed: int


SPLITS = ("train", "val", "test")


def make_benchmark(
    n_train: int,
    n_val: int,
    n_test: int,
    paradigm: Paradigm,
    states: dict[str, StateSpec] | Sequence[StateSpec],
    jitter: int = 0,
    master_seed: int = 0,
    temporal_smoothing: float | None = None,
    mean_jitter: float = 0.0,
) -> dict[str, list[Subject]]:
    """Train/val/test subjects with per-subject jittered block durations.

    Every subject gets its own seed derived from ``master_seed``, split and
    index, so the dataset does not depend on generation order. ``mean_jitter``
    adds a per-subject N(0, mean_jitter^2) offset to every state mean, so a
    state's level has to be inferred from the subject's own recent history.
    """
    counts = (n_train, n_val, n_test)
    if any(c < 1 for c in counts):
        raise InvalidArgumentError("every split needs at least one subject")
    shortest = min(d for _, d in paradigm.blocks)
    if jitter < 0 or shortest - jitter < MIN_BLOCK:
        raise InvalidArgumentError(
            f"jitter {jitter} must be in [0, {shortest - MIN_BLOCK}] so jittered blocks keep >= {MIN_BLOCK} samples"
        )
    if mean_jitter < 0:
        raise InvalidArgumentError("mean_jitter must be >= 0")
    if not isinstance(states, dict):
        states = {s.label: s for s in states}
    out = {}
    for s, (split, count) in enumerate(zip(SPLITS, counts)):
        subjects = []
        for i in range(count):
            seed = derive_seed(master_seed, s, i)
            rng = make_rng(seed, 1)
            para = jittered(paradigm, jitter, rng)
            own = states
            if mean_jitter > 0:
                own = {
                    label: replace(st, mean=st.mean + mean_jitter * rng.standard_normal(st.dim))
                    for label, st in states.items()
                }
            tc, cps = generate_subject(para, own, seed, temporal_smoothing, subject_id=f"{split}-{i:03d}")
            subjects.append(Subject(tc, cps, split, seed))
        out[split] = subjects
    return out


# ---------------------------------------------------------------------------
# ready-made state families


def _random_spd(k: int, rng: np.random.Generator, scale: float) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((k, k)))
    eig = scale * rng.uniform(0.2, 2.0, size=k)
    return (q * eig) @ q.T


def random_states(
    k: int,
    n_states: int,
    seed: int,
    mean_scale: float = 1.0,
    noise_scale: float = 0.3,
    var_radius: float = 0.6,
    labels: Sequence[str] | None = None,
    equal_power: bool = False,
) -> list[StateSpec]:
    """Distinct states with random means and covariances; VAR(1) dynamics unless ``var_radius`` is 0.

    ``equal_power`` rescales every covariance to trace ``k * noise_scale`` so
    states differ in correlation structure but not in total variance.
    """
    rng = make_rng(seed)
    labels = labels or [f"S{i}" for i in range(n_states)]
    out = []
    for label in labels[:n_states]:
        mean = mean_scale * rng.standard_normal(k)
        cov = _random_spd(k, rng, noise_scale)
        if equal_power:
            cov *= k * noise_scale / np.trace(cov)
        A = None
        if var_radius > 0:
            A = rng.standard_normal((k, k))
            A *= var_radius / np.max(np.abs(np.linalg.eigvals(A)))
        out.append(StateSpec(label, mean, cov, A))
    return out


def network_states(
    k: int,
    n_states: int,
    seed: int,
    mean_scale: float = 2.0,
    noise_var: float = 0.4,
    group_size: int = 6,
    rho: float = 0.7,
    labels: Sequence[str] | None = None,
) -> list[StateSpec]:
    """I.i.d. states whose connectivity differs by which channel group is co-active.

    State ``i`` correlates a disjoint group of ``group_size`` channels at
    ``rho``; all channels share variance ``noise_var``, so every state has the
    same total power.
    """
    if n_states * group_size > k:
        raise InvalidArgumentError("not enough channels for disjoint groups")
    if not 0 <= rho < 1:
        raise InvalidArgumentError("rho must be in [0, 1)")
    rng = make_rng(seed)
    labels = labels or [f"S{i}" for i in range(n_states)]
    channels = rng.permutation(k)
    out = []
    for i, label in enumerate(labels[:n_states]):
        group = channels[i * group_size : (i + 1) * group_size]
        corr = np.eye(k)
        corr[np.ix_(group, group)] = rho
        corr[group, group] = 1.0
        out.append(StateSpec(label, mean_scale * rng.standard_normal(k), noise_var * corr))
    return out


TASK_EVENTS = ("CUE", "LF", "LH", "RF", "RH", "T")


@dataclass
class Design:
    """A paradigm template plus its states and per-subject variability."""

    paradigm: Paradigm
    states: list[StateSpec]
    jitter: int = 0
    mean_jitter: float = 0.0
    temporal_smoothing: float | None = None

    def benchmark(self, n_train: int, n_val: int, n_test: int, master_seed: int = 0) -> dict[str, list[Subject]]:
        return make_benchmark(
            n_train, n_val, n_test, self.paradigm, self.states, jitter=self.jitter,
            master_seed=master_seed, temporal_smoothing=self.temporal_smoothing, mean_jitter=self.mean_jitter,
        )


def task_design(k: int = 10, block: int = 50, jitter: int = 10, seed: int = 7, n_blocks: int = 6) -> Design:
    """Motor-task analog: a cue, then movement events, one block each.

    Events are VAR(1) states with distinct means, covariances and dynamics;
    block lengths vary by +-``jitter`` and every subject's state means are
    offset by N(0, 1) per channel. ``n_blocks`` beyond six cycles the events.
    """
    if n_blocks < 1:
        raise InvalidArgumentError("n_blocks must be >= 1")
    states = random_states(k, len(TASK_EVENTS), seed, mean_scale=2.0, labels=TASK_EVENTS)
    paradigm = Paradigm([(TASK_EVENTS[i % len(TASK_EVENTS)], block) for i in range(n_blocks)])
    return Design(paradigm, states, jitter=jitter, mean_jitter=1.0)


REST_REGIMES = ("R0", "R1", "R2")


def rest_design(k: int = 30, block: int = 100, n_blocks: int = 6, jitter: int = 20, seed: int = 11) -> Design:
    """Regime-switching rest analog cycling through three connectivity regimes.

    Regimes share total power and differ in which channel group is
    co-active (and in mean level), so adjacent regimes have distinct
    correlation matrices.
    """
    if n_blocks < 1:
        raise InvalidArgumentError("n_blocks must be >= 1")
    states = network_states(k, len(REST_REGIMES), seed, mean_scale=3.0, group_size=4, rho=0.7, labels=REST_REGIMES)
    paradigm = Paradigm([(REST_REGIMES[i % len(REST_REGIMES)], block) for i in range(n_blocks)])
    return Design(paradigm, states, jitter=jitter, mean_jitter=0.3)


# ---------------------------------------------------------------------------
# on-disk layout: one CSV per subject plus manifest.json


def write_benchmark(bench: dict[str, list[Subject]], out_dir, write_text) -> Path:
    out_dir = Path(out_dir)
    manifest = {}
    for split in SPLITS:
        for subj in bench.get(split, []):
            sid = subj.data.subject_id
            write_text(out_dir / f"{sid}.csv", format_csv(subj.data))
            manifest[sid] = {"ground_truth_cps": subj.change_points, "split": split, "seed": subj.seed}
    path = out_dir / "manifest.json"
    write_text(path, json.dumps(manifest, indent=1, sort_keys=True))
    return path


def read_benchmark(directory, split: str | None = None) -> list[Subject]:
    directory = Path(directory)
    try:
        with open(directory / "manifest.json", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidArgumentError(f"cannot read manifest in {directory}: {exc}") from None
    out = []
    for sid in sorted(manifest):
        entry = manifest[sid]
        if split is not None and entry["split"] != split:
            continue
        tc = read_csv(directory / f"{sid}.csv", subject_id=sid)
        out.append(Subject(tc, [int(c) for c in entry["ground_truth_cps"]], entry["split"], int(entry["seed"])))
    return out
