"""Stacked-LSTM one-step-ahead forecaster trained with truncated BPTT.

The network reads rows ``U[0..t-1]`` and emits a prediction of ``U[t]`` from the
top hidden state through a linear head. Gate blocks inside every ``4H`` weight
matrix are ordered ``[input, forget, cell-candidate, output]``.

All routines are batched over sequences: arrays are laid out ``(time, batch, dim)``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatVersionError, InvalidArgumentError, ModelParseError
from .numerics import TimeCourses, make_rng

log = logging.getLogger(__name__)

FORMAT_VERSION = 1

DESK_SCALE = (64, 64)
FULL_SCALE = (256, 256)
ARCHITECTURE_PRESETS = {"desk-scale": DESK_SCALE, "full-scale": FULL_SCALE}


@dataclass
class LstmLayerParams:
    W_x: np.ndarray  # (4H, D)
    W_h: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)

    @property
    def input_dim(self) -> int:
        return self.W_x.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W_h.shape[1]


@dataclass
class ForecastModel:
    layers: list[LstmLayerParams]
    W_out: np.ndarray  # (K, H_last)
    b_out: np.ndarray  # (K,)
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if not self.layers:
            raise InvalidArgumentError("model needs at least one LSTM layer")
        k = self.layers[0].input_dim
        prev = k
        for i, layer in enumerate(self.layers):
            h = layer.hidden_dim
            if layer.W_x.shape != (4 * h, prev) or layer.W_h.shape != (4 * h, h) or layer.b.shape != (4 * h,):
                raise InvalidArgumentError(f"layer {i} parameter shapes are inconsistent")
            prev = h
        if self.W_out.shape != (k, prev) or self.b_out.shape != (k,):
            raise InvalidArgumentError("output head shape does not match input_dim / last hidden dim")
        if self.norm_mean is None:
            self.norm_mean = np.zeros(k)
        if self.norm_std is None:
            self.norm_std = np.ones(k)
        if self.norm_mean.shape != (k,) or self.norm_std.shape != (k,) or np.any(self.norm_std <= 0):
            raise InvalidArgumentError("normalization statistics must be length-K with positive std")

    @property
    def input_dim(self) -> int:
        return self.layers[0].input_dim

    @property
    def hidden_dims(self) -> tuple[int, ...]:
        return tuple(layer.hidden_dim for layer in self.layers)

    def parameters(self) -> list[np.ndarray]:
        """Trainable arrays in canonical order: per layer (W_x, W_h, b), then W_out, b_out."""
        out = []
        for layer in self.layers:
            out.extend([layer.W_x, layer.W_h, layer.b])
        out.extend([self.W_out, self.b_out])
        return out

    def parameter_names(self) -> list[str]:
        names = []
        for i in range(len(self.layers)):
            names.extend([f"layers.{i}.W_x", f"layers.{i}.W_h", f"layers.{i}.b"])
        names.extend(["W_out", "b_out"])
        return names

    def copy(self) -> "ForecastModel":
        return ForecastModel(
            layers=[LstmLayerParams(l.W_x.copy(), l.W_h.copy(), l.b.copy()) for l in self.layers],
            W_out=self.W_out.copy(),
            b_out=self.b_out.copy(),
            norm_mean=self.norm_mean.copy(),
            norm_std=self.norm_std.copy(),
        )

    @classmethod
    def zeros(cls, input_dim: int, hidden_dims: Sequence[int]) -> "ForecastModel":
        layers = []
        d = input_dim
        for h in hidden_dims:
            layers.append(LstmLayerParams(np.zeros((4 * h, d)), np.zeros((4 * h, h)), np.zeros(4 * h)))
            d = h
        return cls(layers, np.zeros((input_dim, d)), np.zeros(input_dim))

    @classmethod
    def initialize(cls, input_dim: int, hidden_dims: Sequence[int], init_scale: float, rng: np.random.Generator) -> "ForecastModel":
        """Uniform(-init_scale, init_scale) weights; forget-gate biases start at +1."""
        model = cls.zeros(input_dim, hidden_dims)
        for p in model.parameters():
            p[...] = rng.uniform(-init_scale, init_scale, size=p.shape)
        for layer in model.layers:
            h = layer.hidden_dim
            layer.b[h : 2 * h] = 1.0
        return model


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50
    bptt_window: int = 32
    batch_size: int = 8
    seed: int = 0
    grad_clip_norm: float = 5.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init_scale: float = 0.1
    shuffle: bool = True

    def validate(self) -> None:
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning_rate must be > 0")
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if self.bptt_window < 2:
            raise InvalidArgumentError("bptt_window must be >= 2")
        if self.batch_size < 1:
            raise InvalidArgumentError("batch_size must be >= 1")
        if not self.grad_clip_norm > 0:
            raise InvalidArgumentError("grad_clip_norm must be > 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise InvalidArgumentError("Adam hyperparameters out of range")
        if not self.init_scale > 0:
            raise InvalidArgumentError("init_scale must be > 0")


# ---------------------------------------------------------------------------
# batched forward / backward


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _zero_state(model: ForecastModel, batch: int):
    return [(np.zeros((batch, h)), np.zeros((batch, h))) for h in model.hidden_dims]


def _layer_forward(p: LstmLayerParams, X, h0, c0):
    W, B, _ = X.shape
    H = p.hidden_dim
    pre = X @ p.W_x.T + p.b
    gates = np.empty((W, B, 4 * H))
    cells = np.empty((W + 1, B, H))
    hs = np.empty((W + 1, B, H))
    tanh_c = np.empty((W, B, H))
    cells[0], hs[0] = c0, h0
    W_hT = p.W_h.T
    for t in range(W):
        a = pre[t] + hs[t] @ W_hT
        g = gates[t]
        g[:, : 2 * H] = _sigmoid(a[:, : 2 * H])
        g[:, 2 * H : 3 * H] = np.tanh(a[:, 2 * H : 3 * H])
        g[:, 3 * H :] = _sigmoid(a[:, 3 * H :])
        cells[t + 1] = g[:, H : 2 * H] * cells[t] + g[:, :H] * g[:, 2 * H : 3 * H]
        tanh_c[t] = np.tanh(cells[t + 1])
        hs[t + 1] = g[:, 3 * H :] * tanh_c[t]
    return hs[1:], (X, gates, cells, hs, tanh_c)


def _layer_backward(p: LstmLayerParams, cache, dH):
    X, gates, cells, hs, tanh_c = cache
    W, B, _ = X.shape
    H = p.hidden_dim
    dA = np.empty((W, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    W_h = p.W_h
    for t in range(W - 1, -1, -1):
        g = gates[t]
        i, f, c_hat, o = g[:, :H], g[:, H : 2 * H], g[:, 2 * H : 3 * H], g[:, 3 * H :]
        dh = dH[t] + dh_next
        tc = tanh_c[t]
        dc = dc_next + dh * o * (1.0 - tc * tc)
        d = dA[t]
        d[:, :H] = dc * c_hat * i * (1.0 - i)
        d[:, H : 2 * H] = dc * cells[t] * f * (1.0 - f)
        d[:, 2 * H : 3 * H] = dc * i * (1.0 - c_hat * c_hat)
        d[:, 3 * H :] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = d @ W_h
    dA2 = dA.reshape(W * B, 4 * H)
    dW_x = dA2.T @ X.reshape(W * B, -1)
    dW_h = dA2.T @ hs[:-1].reshape(W * B, H)
    db = dA2.sum(axis=0)
    dX = dA @ p.W_x
    return dX, (dW_x, dW_h, db)


def _forward(model: ForecastModel, X, states):
    """Run all layers on X (W, B, K); returns outputs, top hidden, caches, new states."""
    caches = []
    new_states = []
    inp = X
    for p, (h0, c0) in zip(model.layers, states):
        hs, cache = _layer_forward(p, inp, h0, c0)
        caches.append(cache)
        new_states.append((hs[-1].copy(), cache[2][-1].copy()))
        inp = hs
    out = inp @ model.W_out.T + model.b_out
    return out, inp, caches, new_states


def _window_step(model: ForecastModel, X, Y, weights, states, need_grad=True):
    """Loss sum_t,b weights[t,b] * ||out - Y||^2 over one window, with its gradients."""
    out, top, caches, new_states = _forward(model, X, states)
    diff = out - Y
    sq = np.einsum("tbk,tbk->tb", diff, diff)
    loss_tb = weights * sq
    if not need_grad:
        return loss_tb, None, new_states
    dOut = 2.0 * weights[..., None] * diff
    W, B, K = dOut.shape
    dOut2 = dOut.reshape(W * B, K)
    dW_out = dOut2.T @ top.reshape(W * B, -1)
    db_out = dOut2.sum(axis=0)
    dH = dOut @ model.W_out
    layer_grads = []
    for p, cache in zip(reversed(model.layers), reversed(caches)):
        dH, g = _layer_backward(p, cache, dH)
        layer_grads.append(g)
    grads = []
    for g in reversed(layer_grads):
        grads.extend(g)
    grads.extend([dW_out, db_out])
    return loss_tb, grads, new_states


def _check_input(model: ForecastModel, sequence: TimeCourses):
    if sequence.n_channels != model.input_dim:
        raise InvalidArgumentError(
            f"sequence has K={sequence.n_channels} channels, model expects {model.input_dim}"
        )


# ---------------------------------------------------------------------------
# public operations


def lstm_forward(model: ForecastModel, sequence: TimeCourses):
    """Teacher-forced one-step-ahead pass of the raw network.

    Returns ``(predictions, states)`` where ``predictions[t-2]`` estimates
    ``U(t)`` (1-based ``t = 2..T``) from rows before ``t`` only, and ``states``
    holds the final ``(h, c)`` of each layer.
    """
    _check_input(model, sequence)
    U = sequence.data
    X = U[:-1, None, :]
    out, _, _, states = _forward(model, X, _zero_state(model, 1))
    return out[:, 0, :], [(h[0], c[0]) for h, c in states]


def sequence_loss(predictions, sequence: TimeCourses) -> float:
    """Mean over t = 2..T of the squared Euclidean distance between profiles."""
    pred = np.asarray(predictions, dtype=np.float64)
    target = sequence.data[1:]
    if pred.shape != target.shape:
        raise InvalidArgumentError(f"predictions shape {pred.shape} != {target.shape}")
    diff = pred - target
    return float(np.sum(diff * diff) / target.shape[0])


def compute_gradients(model: ForecastModel, sequence: TimeCourses, bptt_window: int) -> list[np.ndarray]:
    """Gradients of ``sequence_loss`` in ``model.parameters()`` order.

    Backpropagation is truncated at window boundaries: states carry forward
    across windows but no gradient flows back through them. With
    ``bptt_window >= T - 1`` the result is the exact gradient.
    """
    _check_input(model, sequence)
    if bptt_window < 1:
        raise InvalidArgumentError("bptt_window must be >= 1")
    U = sequence.data
    n = U.shape[0] - 1
    weights = np.full((n, 1), 1.0 / n)
    X, Y = U[:-1, None, :], U[1:, None, :]
    total = [np.zeros_like(p) for p in model.parameters()]
    states = _zero_state(model, 1)
    for s in range(0, n, bptt_window):
        e = min(n, s + bptt_window)
        _, grads, states = _window_step(model, X[s:e], Y[s:e], weights[s:e], states)
        for acc, g in zip(total, grads):
            acc += g
    return total


def _standardize(model: ForecastModel, data: np.ndarray) -> np.ndarray:
    return (data - model.norm_mean) / model.norm_std


def predict_profiles(model: ForecastModel, sequence: TimeCourses) -> np.ndarray:
    """Teacher-forced predictions of rows 2..T, in the units of ``sequence``.

    Inputs are standardized with the model's stored channel statistics and the
    outputs mapped back; for a model with identity normalization this is
    exactly ``lstm_forward(...)[0]``.
    """
    return predict_many(model, [sequence])[0]


def predict_many(model: ForecastModel, sequences: Sequence[TimeCourses]) -> list[np.ndarray]:
    """``predict_profiles`` for each sequence.

    Sequences run one at a time: BLAS rounding depends on batch shape, and a
    subject's predictions must not depend on which other subjects ran with it.
    """
    out = []
    for seq in sequences:
        _check_input(model, seq)
        X = _standardize(model, seq.data[:-1])[:, None, :]
        pred, _, _, _ = _forward(model, X, _zero_state(model, 1))
        out.append(pred[:, 0] * model.norm_std + model.norm_mean)
    return out


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1: float, beta2: float, eps: float):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def normalization_stats(dataset: Sequence[TimeCourses]) -> tuple[np.ndarray, np.ndarray]:
    pooled = np.concatenate([seq.data for seq in dataset], axis=0)
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    std[std < 1e-12] = 1.0
    return mean, std


def train(
    dataset: Sequence[TimeCourses],
    hidden_dims: Sequence[int] = DESK_SCALE,
    cfg: TrainConfig | None = None,
) -> tuple[ForecastModel, list[float]]:
    """Fit a forecaster on ``dataset``; returns the model and per-epoch mean loss.

    Channels are standardized with statistics pooled over ``dataset``; the
    statistics are stored on the model. Each minibatch of sequences is cut into
    ``bptt_window``-step windows with one clipped Adam update per window.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    if not dataset:
        raise InvalidArgumentError("training dataset is empty")
    k = dataset[0].n_channels
    if any(seq.n_channels != k for seq in dataset):
        raise InvalidArgumentError("all training sequences must share K")
    if not hidden_dims or any(h < 1 for h in hidden_dims):
        raise InvalidArgumentError(f"invalid hidden dims {hidden_dims}")

    rng = make_rng(cfg.seed)
    model = ForecastModel.initialize(k, hidden_dims, cfg.init_scale, rng)
    model.norm_mean, model.norm_std = normalization_stats(dataset)
    normed = [_standardize(model, seq.data) for seq in dataset]
    opt = Adam(model.parameters(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)

    loss_curve = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(normed)) if cfg.shuffle else np.arange(len(normed))
        seq_losses = np.zeros(len(normed))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = [normed[i] for i in idx]
            lengths = np.array([u.shape[0] - 1 for u in batch])
            n, B = int(lengths.max()), len(batch)
            X = np.zeros((n, B, k))
            Y = np.zeros((n, B, k))
            weights = np.zeros((n, B))
            for b, u in enumerate(batch):
                X[: lengths[b], b] = u[:-1]
                Y[: lengths[b], b] = u[1:]
                weights[: lengths[b], b] = 1.0 / (lengths[b] * B)
            states = _zero_state(model, B)
            for s in range(0, n, cfg.bptt_window):
                e = min(n, s + cfg.bptt_window)
                loss_tb, grads, states = _window_step(model, X[s:e], Y[s:e], weights[s:e], states)
                seq_losses[idx] += loss_tb.sum(axis=0) * B
                clip_global_norm(grads, cfg.grad_clip_norm)
                opt.step(grads)
        loss_curve.append(float(seq_losses.mean()))
        log.debug("epoch %d loss %.6f", epoch + 1, loss_curve[-1])
    return model, loss_curve


# ---------------------------------------------------------------------------
# persistence


def model_to_dict(model: ForecastModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "input_dim": model.input_dim,
        "hidden_dims": list(model.hidden_dims),
        "parameter_order": "per layer W_x (4H x D), W_h (4H x H), b (4H); gate blocks [input, forget, cell, output]; then W_out (K x H), b_out (K)",
        "layers": [
            {"W_x": l.W_x.tolist(), "W_h": l.W_h.tolist(), "b": l.b.tolist()} for l in model.layers
        ],
        "W_out": model.W_out.tolist(),
        "b_out": model.b_out.tolist(),
        "normalization": {"mean": model.norm_mean.tolist(), "std": model.norm_std.tolist()},
    }


def model_from_dict(doc: dict) -> ForecastModel:
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise ModelParseError("model document lacks format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise FormatVersionError(
            f"unsupported model format_version {doc['format_version']!r} (this build reads {FORMAT_VERSION})"
        )
    try:
        layers = [
            LstmLayerParams(
                np.array(l["W_x"], dtype=np.float64),
                np.array(l["W_h"], dtype=np.float64),
                np.array(l["b"], dtype=np.float64),
            )
            for l in doc["layers"]
        ]
        model = ForecastModel(
            layers,
            np.array(doc["W_out"], dtype=np.float64),
            np.array(doc["b_out"], dtype=np.float64),
            norm_mean=np.array(doc["normalization"]["mean"], dtype=np.float64),
            norm_std=np.array(doc["normalization"]["std"], dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelParseError(f"malformed model document: {exc}") from None
    if model.input_dim != doc.get("input_dim") or list(model.hidden_dims) != doc.get("hidden_dims"):
        raise ModelParseError("declared dims disagree with parameter arrays")
    if not all(np.all(np.isfinite(p)) for p in model.parameters()):
        raise ModelParseError("model contains non-finite parameters")
    return model


def write_atomic(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: ForecastModel, destination) -> None:
    write_atomic(destination, json.dumps(model_to_dict(model)))


def load_model(source) -> ForecastModel:
    try:
        with open(source, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"{source}: not valid JSON ({exc})") from None
    return model_from_dict(doc)
