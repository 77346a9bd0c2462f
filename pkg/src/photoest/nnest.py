"""Histogram + dense-layer neural estimator trained from scratch with Adam on MSLE.

The first stage bins the delays of a record into a fixed histogram, which
makes the estimator blind to the order of the delays. Weights live in
float32; serialization stores them verbatim so a reloaded model reproduces
its outputs bit for bit.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from photoest.bayes import Estimate
from photoest.errors import DivergenceError, DomainError, FormatError

HIDDEN_1D = (100, 50, 30)
HIDDEN_2D = (100, 50, 30, 20, 10)
SUPPORT_1D = ((0.0, 5.0),)
SUPPORT_2D = ((0.0, 3.0), (0.25, 5.0))


@dataclass(frozen=True)
class HistogramSpec:
    n_bins: int = 700
    tau_min: float = 0.0
    tau_max: float = 100.0

    def __post_init__(self):
        if self.n_bins < 1 or not self.tau_max > self.tau_min:
            raise DomainError("invalid histogram geometry")

    @property
    def width(self) -> float:
        return (self.tau_max - self.tau_min) / self.n_bins


@dataclass
class Layer:
    weights: np.ndarray
    biases: np.ndarray
    activation: str  # "relu" or "linear"


@dataclass
class HistDenseModel:
    hist: HistogramSpec
    layers: list
    support: tuple
    n_clicks: int = 48
    meta: dict = field(default_factory=dict)

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weights.shape[1]

    @property
    def arch(self) -> str:
        return "1d" if self.output_dim == 1 else "2d"

    def n_params(self) -> int:
        return sum(l.weights.size + l.biases.size for l in self.layers)

    def astype(self, dtype) -> "HistDenseModel":
        layers = [Layer(l.weights.astype(dtype), l.biases.astype(dtype), l.activation) for l in self.layers]
        return HistDenseModel(self.hist, layers, self.support, self.n_clicks, dict(self.meta))

    def shapes(self) -> list:
        return [l.weights.shape for l in self.layers]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 12800
    epochs: int = 1200
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    val_fraction: float = 0.2
    sigma_y: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise DomainError("val_fraction must lie strictly between 0 and 1")
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise DomainError("invalid training configuration")


@dataclass
class TrainHistory:
    train_msle: list = field(default_factory=list)
    val_msle: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_msle", "val_msle"])
            for i, (a, b) in enumerate(zip(self.train_msle, self.val_msle), start=1):
                w.writerow([i, repr(float(a)), repr(float(b))])


# --------------------------------------------------------------------------
# features
# --------------------------------------------------------------------------


def bin_indices(delays: np.ndarray, spec: HistogramSpec) -> np.ndarray:
    """Bin index per delay, -1 for delays outside [tau_min, tau_max]."""
    d = np.asarray(delays, dtype=float)
    idx = np.floor((d - spec.tau_min) / spec.width).astype(np.int64)
    idx = np.where(d == spec.tau_max, spec.n_bins - 1, idx)
    inside = (d >= spec.tau_min) & (d <= spec.tau_max)
    return np.where(inside, np.clip(idx, 0, spec.n_bins - 1), -1)


def histogram_features(record, spec: HistogramSpec = HistogramSpec()) -> np.ndarray:
    """Raw bin counts of one record's delays."""
    d = np.asarray(getattr(record, "delays", record), dtype=float)
    idx = bin_indices(d, spec)
    return np.bincount(idx[idx >= 0], minlength=spec.n_bins).astype(np.float64)


def feature_matrix(delays: np.ndarray, spec: HistogramSpec, dtype=np.float32) -> sp.csr_matrix:
    """Sparse (B, n_bins) count matrix for a (B, N) delay array."""
    delays = np.atleast_2d(np.asarray(delays, dtype=float))
    idx = bin_indices(delays, spec)
    rows = np.repeat(np.arange(delays.shape[0]), delays.shape[1])
    cols = idx.ravel()
    keep = cols >= 0
    mat = sp.coo_matrix(
        (np.ones(keep.sum(), dtype=dtype), (rows[keep], cols[keep])),
        shape=(delays.shape[0], spec.n_bins),
    ).tocsr()
    mat.sum_duplicates()
    return mat


# --------------------------------------------------------------------------
# network
# --------------------------------------------------------------------------


def build_model(arch: str = "1d", seed: int = 0, hist: HistogramSpec = HistogramSpec(),
                n_clicks: int = 48, dtype=np.float32) -> HistDenseModel:
    """Fresh model with Glorot-uniform weights and zero biases."""
    if arch == "1d":
        hidden, out, support = HIDDEN_1D, 1, SUPPORT_1D
    elif arch == "2d":
        hidden, out, support = HIDDEN_2D, 2, SUPPORT_2D
    else:
        raise DomainError(f"unknown architecture {arch!r}")
    rng = np.random.default_rng(seed)
    sizes = (hist.n_bins, *hidden, out)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)
        act = "linear" if i == len(sizes) - 2 else "relu"
        layers.append(Layer(w, np.zeros(fan_out, dtype=dtype), act))
    meta = {"init": "glorot_uniform", "init_seed": int(seed)}
    return HistDenseModel(hist, layers, support, n_clicks, meta)


def _forward(model: HistDenseModel, x):
    """Raw (unclamped) outputs plus the activations needed for backprop."""
    acts = [x]
    pre = []
    h = x
    for layer in model.layers:
        z = h @ layer.weights + layer.biases
        pre.append(z)
        h = np.maximum(z, 0) if layer.activation == "relu" else z
        acts.append(h)
    return h, pre, acts


def clamp_to_support(values: np.ndarray, support) -> np.ndarray:
    lo = np.array([s[0] for s in support], dtype=values.dtype)
    hi = np.array([s[1] for s in support], dtype=values.dtype)
    return np.clip(values, lo, hi)


def predict(model: HistDenseModel, delays: np.ndarray) -> np.ndarray:
    """Clamped estimates for a (B, N) delay array, shaped (B, output_dim)."""
    delays = np.atleast_2d(np.asarray(delays, dtype=float))
    if delays.shape[1] != model.n_clicks:
        raise DomainError(f"model expects {model.n_clicks} delays per record, got {delays.shape[1]}")
    dtype = model.layers[0].weights.dtype
    x = feature_matrix(delays, model.hist, dtype)
    out, _, _ = _forward(model, x)
    return clamp_to_support(np.asarray(out), model.support)


def forward(model: HistDenseModel, record) -> Estimate:
    vals = predict(model, np.asarray(record.delays)[None, :])[0]
    return Estimate(vals.astype(np.float64), "nn")


def msle_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise DomainError("pred and target must have equal shapes")
    if np.any(target < 0):
        raise DomainError("MSLE targets must be nonnegative")
    return float(np.mean((np.log1p(target) - np.log1p(np.maximum(pred, 0.0))) ** 2))


def loss_and_grads(model: HistDenseModel, x, target: np.ndarray):
    """MSLE over a batch and its gradient with respect to every weight and bias."""
    out, pre, acts = _forward(model, x)
    out = np.asarray(out)
    floored = np.maximum(out, 0)
    diff = np.log1p(floored) - np.log1p(target)
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    grad = (2.0 / diff.size) * diff / (1.0 + floored)
    grad = np.where(out > 0, grad, 0).astype(out.dtype)
    grads = [None] * len(model.layers)
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if layer.activation == "relu":
            grad = grad * (pre[i] > 0)
        a = acts[i]
        gw = a.T @ grad
        grads[i] = (np.asarray(gw), grad.sum(axis=0))
        if i > 0:
            grad = grad @ layer.weights.T
    return loss, grads


class Adam:
    def __init__(self, model: HistDenseModel, lr, beta1, beta2, eps):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [(np.zeros_like(l.weights), np.zeros_like(l.biases)) for l in model.layers]
        self.v = [(np.zeros_like(l.weights), np.zeros_like(l.biases)) for l in model.layers]

    def step(self, model: HistDenseModel, grads):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for layer, g, m, v in zip(model.layers, grads, self.m, self.v):
            for param, gp, mp, vp in zip((layer.weights, layer.biases), g, m, v):
                mp *= self.beta1
                mp += (1.0 - self.beta1) * gp
                vp *= self.beta2
                vp += (1.0 - self.beta2) * gp * gp
                param -= (self.lr * (mp / c1) / (np.sqrt(vp / c2) + self.eps)).astype(param.dtype)


def add_target_noise(targets, sigma_y: float, rng: np.random.Generator, support=None) -> np.ndarray:
    """Gaussian calibration noise on training targets, clamped into the support."""
    if sigma_y < 0:
        raise DomainError("sigma_y must be nonnegative")
    targets = np.asarray(targets, dtype=float)
    if sigma_y == 0:
        return targets.copy()
    noisy = targets + rng.normal(0.0, sigma_y, size=targets.shape)
    if support is not None:
        noisy = clamp_to_support(noisy.reshape(len(noisy), -1), support).reshape(targets.shape)
    return noisy


def dataset_targets(dataset, arch: str) -> np.ndarray:
    truths = dataset.truths()
    return truths[:, :1] if arch == "1d" else truths


def train(dataset, config: TrainConfig = TrainConfig(), arch: str = "1d",
          hist: HistogramSpec = HistogramSpec(), log=None):
    """Mini-batch Adam on MSLE. Returns the final-epoch model and its loss history."""
    if dataset.meta.n_clicks != 48:
        raise DomainError("the neural estimator is trained on 48-click records")
    model = build_model(arch, config.seed, hist, dataset.meta.n_clicks)
    targets = dataset_targets(dataset, arch)
    lo = np.array([s[0] for s in model.support])
    hi = np.array([s[1] for s in model.support])
    if np.any(targets < lo) or np.any(targets > hi):
        raise DomainError("training targets fall outside the architecture's support box")

    rng = np.random.default_rng(config.seed)
    targets = add_target_noise(targets, config.sigma_y, rng, model.support)
    n = len(dataset)
    order = rng.permutation(n)
    n_val = int(round(config.val_fraction * n))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if config.batch_size > len(train_idx):
        raise DomainError(f"batch size {config.batch_size} exceeds {len(train_idx)} training records")

    dtype = model.layers[0].weights.dtype
    x_all = feature_matrix(dataset.delays(), hist, dtype)
    y_all = targets.astype(dtype)
    x_train, y_train = x_all[train_idx], y_all[train_idx]
    x_val, y_val = x_all[val_idx], y_all[val_idx]

    opt = Adam(model, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    history = TrainHistory()
    n_train = len(train_idx)
    for epoch in range(config.epochs):
        perm = rng.permutation(n_train)
        total, seen = 0.0, 0
        for start in range(0, n_train, config.batch_size):
            b = perm[start : start + config.batch_size]
            loss, grads = loss_and_grads(model, x_train[b], y_train[b])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch + 1}")
            opt.step(model, grads)
            total += loss * len(b)
            seen += len(b)
        history.train_msle.append(total / seen)
        if n_val:
            out, _, _ = _forward(model, x_val)
            history.val_msle.append(msle_loss(np.asarray(out), y_val))
        else:
            history.val_msle.append(float("nan"))
        if log is not None:
            log(epoch + 1, history.train_msle[-1], history.val_msle[-1])
    model.meta.update({"epochs": config.epochs, "train_seed": config.seed, "sigma_y": config.sigma_y})
    return model, history


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

_MAGIC = b"HDNN"
_VERSION = 1
_HEAD = struct.Struct("<4sHBBIddH")
_LAYER = struct.Struct("<IIB")
_ACTS = {"linear": 0, "relu": 1}


def save_model(model: HistDenseModel, path) -> None:
    """Header, histogram geometry, support box, then per layer its shape and f32 weights."""
    arch_tag = 1 if model.arch == "1d" else 2
    parts = [
        _HEAD.pack(_MAGIC, _VERSION, arch_tag, model.n_clicks, model.hist.n_bins,
                   model.hist.tau_min, model.hist.tau_max, len(model.layers))
    ]
    parts.append(np.array(model.support, dtype="<f8").tobytes())
    for layer in model.layers:
        fan_in, fan_out = layer.weights.shape
        parts.append(_LAYER.pack(fan_in, fan_out, _ACTS[layer.activation]))
        parts.append(layer.weights.astype("<f4").tobytes())
        parts.append(layer.biases.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> HistDenseModel:
    raw = Path(path).read_bytes()
    if len(raw) < _HEAD.size:
        raise FormatError(f"{path}: file too short for a model header")
    magic, version, arch_tag, n_clicks, n_bins, tmin, tmax, n_layers = _HEAD.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic bytes {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported model format version {version}")
    if arch_tag not in (1, 2):
        raise FormatError(f"{path}: unknown architecture tag {arch_tag}")
    off = _HEAD.size
    try:
        support = np.frombuffer(raw, "<f8", 2 * arch_tag, off).reshape(arch_tag, 2)
        off += 16 * arch_tag
        acts = {v: k for k, v in _ACTS.items()}
        layers = []
        for _ in range(n_layers):
            fan_in, fan_out, act = _LAYER.unpack_from(raw, off)
            off += _LAYER.size
            w = np.frombuffer(raw, "<f4", fan_in * fan_out, off).reshape(fan_in, fan_out)
            off += 4 * w.size
            b = np.frombuffer(raw, "<f4", fan_out, off)
            off += 4 * fan_out
            layers.append(Layer(w.astype(np.float32), b.astype(np.float32), acts[act]))
    except (ValueError, struct.error, KeyError) as exc:
        raise FormatError(f"{path}: truncated or corrupt model body") from exc
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes after the last layer")
    hist = HistogramSpec(n_bins, tmin, tmax)
    if layers[0].weights.shape[0] != n_bins or layers[-1].weights.shape[1] != arch_tag:
        raise FormatError(f"{path}: layer shapes disagree with the header")
    return HistDenseModel(hist, layers, tuple(map(tuple, support.tolist())), n_clicks)
