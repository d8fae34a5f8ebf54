"""Loss, gradients, gradient checking and the training loop."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .gru import SpeedTensor, windows
from .kg.embed import KnowledgeVectors
from .metrics import COLUMNS, MetricReport, evaluate
from .model import ForecastModel
from .optim import Adam, Params, flatten, unflatten

log = logging.getLogger(__name__)

STEPS_PER_DAY = 96


class DataError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 64
    epochs: int = 300
    train_fraction: float = 0.8
    seed: int = 0
    weight_decay: float = 1.5e-3
    horizon: int = 1
    window: int = 4
    lr_decay: float = 1.0        # learning rate multiplier applied after every epoch
    dtype: str = "float64"       # arithmetic used while training

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.window < 1 or self.horizon < 1:
            raise ValueError("window and horizon must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ValueError("lr_decay must lie in (0, 1]")


@dataclass
class Batch:
    x: np.ndarray      # (B, w, n) normalized input speeds
    e_s: np.ndarray    # (n, d_s)
    e_d: np.ndarray    # (B, w, n, d_d)
    y: np.ndarray      # (B, n, H) normalized targets
    p: np.ndarray      # (n, n)

    def __len__(self):
        return self.x.shape[0]

    def repeated(self, k: int) -> "Batch":
        return Batch(np.concatenate([self.x] * k), self.e_s, np.concatenate([self.e_d] * k),
                     np.concatenate([self.y] * k), self.p)


@dataclass
class ForecastData:
    """Normalized inputs/targets with knowledge vectors and the split point."""
    inputs: np.ndarray         # (T, n), possibly perturbed
    targets: np.ndarray        # (T, n), clean
    kv: KnowledgeVectors
    p: np.ndarray
    bounds: tuple[float, float]
    split: int                 # first validation step
    time_ids: list[int] = field(default_factory=list)

    @classmethod
    def build(cls, speeds: SpeedTensor, kv: KnowledgeVectors, p: np.ndarray, train_fraction: float,
              inputs: SpeedTensor | None = None) -> "ForecastData":
        if speeds.bounds is not None:
            raise DataError("pass raw speeds; normalization is derived from the training portion")
        T = speeds.n_steps
        if kv.e_d.shape[0] != T or kv.n_nodes != speeds.n_nodes:
            raise DataError(f"knowledge vectors ({kv.e_d.shape[0]} steps, {kv.n_nodes} nodes) do not "
                            f"cover speeds ({T} steps, {speeds.n_nodes} nodes)")
        split = int(round(train_fraction * T))
        train = speeds.values[:split]
        lo, hi = float(train.min()), float(train.max())
        if hi <= lo:
            raise DataError("training speeds are constant")
        raw_in = speeds.values if inputs is None else inputs.values
        return cls((raw_in - lo) / (hi - lo), (speeds.values - lo) / (hi - lo), kv, p, (lo, hi), split,
                   list(speeds.time_ids))

    @property
    def span(self) -> float:
        return self.bounds[1] - self.bounds[0]

    def denormalize(self, a: np.ndarray) -> np.ndarray:
        return a * self.span + self.bounds[0]

    def starts(self, part: str, window: int, horizon: int) -> np.ndarray:
        T = self.inputs.shape[0]
        if part == "train":
            return windows(T, window, horizon, 0, self.split)
        if part == "val":
            return windows(T, window, horizon, self.split, T)
        raise ValueError(part)

    def astype(self, dtype) -> "ForecastData":
        kv = KnowledgeVectors(self.kv.e_s.astype(dtype), self.kv.e_d.astype(dtype), self.kv.time_index)
        return replace(self, inputs=self.inputs.astype(dtype), targets=self.targets.astype(dtype), kv=kv,
                       p=self.p.astype(dtype))

    def batch(self, starts: np.ndarray, window: int, horizon: int) -> Batch:
        idx = starts[:, None] + np.arange(window)
        tgt = starts[:, None] + window + np.arange(horizon)
        x = self.inputs[idx]
        y = np.transpose(self.targets[tgt], (0, 2, 1))
        return Batch(x, self.kv.e_s, self.kv.e_d[idx], y, self.p)


# -- loss and gradients ------------------------------------------------------

def loss(pred: np.ndarray, truth: np.ndarray, model: ForecastModel | None = None,
         weight_decay: float = 0.0) -> float:
    """Mean squared error plus weight_decay * ||theta||^2 / 2."""
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, truth {truth.shape}")
    value = float(np.mean((pred - truth) ** 2))
    if weight_decay and model is not None:
        theta = model.vector()
        value += 0.5 * weight_decay * float(theta @ theta)
    return value


def gradients(model: ForecastModel, batch: Batch, weight_decay: float = 0.0) -> tuple[float, Params]:
    """Batch loss and its exact gradient for every named parameter."""
    if len(batch) == 0:
        raise DataError("empty batch")
    pred, cache = model.forward(batch.x, batch.e_s, batch.e_d, batch.p)
    value = loss(pred, batch.y, model, weight_decay)
    dpred = 2.0 * (pred - batch.y) / pred.size
    grads = model.backward(cache, dpred)
    if weight_decay:
        for k, v in model.params().items():
            grads[k] += weight_decay * v
    return value, grads


def gradient_vector(model: ForecastModel, batch: Batch, weight_decay: float = 0.0) -> np.ndarray:
    return flatten(gradients(model, batch, weight_decay)[1])


# -- gradient checking -------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    worst_name: str
    analytic: float
    numeric: float
    n_checked: int

    def __str__(self):
        return (f"max rel err {self.max_rel_error:.3e} at {self.worst_name} "
                f"(analytic {self.analytic:.6e}, numeric {self.numeric:.6e}, {self.n_checked} coords)")


def check_gradient(f: Callable[[np.ndarray], float], grad: np.ndarray, x0: np.ndarray, eps: float = 1e-5,
                   coords: np.ndarray | None = None, atol: float = 1e-7,
                   names: list[str] | None = None) -> GradCheckReport:
    """Central differences of ``f`` at ``x0`` against ``grad``.

    Relative error per coordinate is |a - n| / max(|a|, |n|, atol).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x0, dtype=np.float64)
    coords = np.arange(x.size) if coords is None else np.asarray(coords)
    worst = (-1.0, -1, 0.0, 0.0)
    for i in coords:
        xi = x[i]
        x[i] = xi + eps
        fp = f(x)
        x[i] = xi - eps
        fm = f(x)
        x[i] = xi
        num = (fp - fm) / (2.0 * eps)
        a = grad[i]
        rel = abs(a - num) / max(abs(a), abs(num), atol)
        if rel > worst[0]:
            worst = (rel, int(i), float(a), float(num))
    rel, i, a, num = worst
    name = names[i] if names is not None and i >= 0 else str(i)
    return GradCheckReport(rel, i, name, a, num, len(coords))


def finite_diff_check(model: ForecastModel, batch: Batch, eps: float = 1e-5, weight_decay: float = 0.0,
                      max_coords: int = 5000, seed: int = 0, atol: float = 1e-7) -> GradCheckReport:
    """Every parameter coordinate, or a seeded random subset above ``max_coords``."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    work = model.copy()
    theta = work.vector()
    _, g = gradients(work, batch, weight_decay)
    grad = flatten(g)
    names = [f"{k}[{j}]" for k, v in work.params().items() for j in range(v.size)]
    coords = None
    if theta.size > max_coords:
        coords = np.sort(np.random.default_rng(seed).choice(theta.size, max_coords, replace=False))

    def f(vec):
        work.set_vector(vec)
        return loss(work.predict(batch.x, batch.e_s, batch.e_d, batch.p), batch.y, work, weight_decay)

    report = check_gradient(f, grad, theta, eps, coords, atol, names)
    work.set_vector(theta)
    return report


# -- training ----------------------------------------------------------------

HISTORY_COLUMNS = ("epoch", "train_loss") + COLUMNS


@dataclass
class TrainResult:
    model: ForecastModel
    history: list[dict] = field(default_factory=list)
    data: ForecastData | None = None


def train(model: ForecastModel, data: ForecastData, config: TrainConfig,
          eval_every: int = 1) -> TrainResult:
    """Adam on mini-batches of training windows; validation metrics per epoch.

    The model is updated in place and also returned.
    """
    cfg = config
    if model.config.horizon != cfg.horizon:
        raise ValueError(f"model horizon {model.config.horizon} != config horizon {cfg.horizon}")
    tr = data.starts("train", cfg.window, cfg.horizon)
    va = data.starts("val", cfg.window, cfg.horizon)
    if tr.size == 0 or va.size == 0:
        raise DataError(f"degenerate split: {tr.size} training and {va.size} validation windows")
    rng = np.random.default_rng(cfg.seed)
    work = data if cfg.dtype == "float64" else data.astype(cfg.dtype)
    model.astype(cfg.dtype)
    params = model.params()
    opt = Adam(lr=cfg.lr)
    history = []
    try:
        for epoch in range(cfg.epochs):
            perm = rng.permutation(tr)
            total, count = 0.0, 0
            for k in range(0, perm.size, cfg.batch_size):
                b = work.batch(perm[k:k + cfg.batch_size], cfg.window, cfg.horizon)
                value, grads = gradients(model, b, cfg.weight_decay)
                opt.step(params, grads)
                total += value * len(b)
                count += len(b)
            opt.lr *= cfg.lr_decay
            row = {"epoch": epoch, "train_loss": total / count}
            if (epoch + 1) % eval_every == 0 or epoch == cfg.epochs - 1:
                row.update(evaluate_split(model, work, cfg, "val").as_dict())
            history.append(row)
            log.debug("epoch %d %s", epoch, row)
    finally:
        model.astype(np.float64)
    return TrainResult(model, history, data)


def predict_split(model: ForecastModel, data: ForecastData, config: TrainConfig, part: str = "val",
                  chunk: int = 256):
    """Denormalized (pred, truth), each (B, n, H), over every window of ``part``."""
    starts = data.starts(part, config.window, config.horizon)
    preds, truths = [], []
    for k in range(0, starts.size, chunk):
        b = data.batch(starts[k:k + chunk], config.window, config.horizon)
        preds.append(model.predict(b.x, b.e_s, b.e_d, b.p))
        truths.append(b.y)
    return data.denormalize(np.concatenate(preds)), data.denormalize(np.concatenate(truths))


def evaluate_split(model, data, config, part="val") -> MetricReport:
    return evaluate(*predict_split(model, data, config, part))


def historical_average(data: ForecastData, config: TrainConfig, part: str = "val",
                       period: int = STEPS_PER_DAY):
    """Per-node training mean of the same time-of-day slot, for each target step.

    Returns denormalized (pred, truth) shaped like ``predict_split``.
    """
    train = data.denormalize(data.targets[:data.split])
    slots = np.arange(data.split) % period
    table = np.full((period, train.shape[1]), np.nan)
    for s in range(period):
        rows = train[slots == s]
        if len(rows):
            table[s] = rows.mean(axis=0)
    fallback = train.mean(axis=0)
    table = np.where(np.isnan(table), fallback, table)
    starts = data.starts(part, config.window, config.horizon)
    tgt = starts[:, None] + config.window + np.arange(config.horizon)       # (B, H)
    pred = np.transpose(table[tgt % period], (0, 2, 1))
    truth = np.transpose(data.denormalize(data.targets[tgt]), (0, 2, 1))
    return pred, truth


def write_history(history: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for row in history:
            w.writerow([row["epoch"], repr(row["train_loss"])] +
                       [repr(row[c]) if c in row else "" for c in COLUMNS])


def smoothed(values, window: int = 10) -> np.ndarray:
    """Means over consecutive non-overlapping blocks of ``window`` values."""
    v = np.asarray(values, dtype=np.float64)
    k = v.size // window
    return v[:k * window].reshape(k, window).mean(axis=1)


__all__ = ["TrainConfig", "Batch", "ForecastData", "DataError", "loss", "gradients", "gradient_vector",
           "GradCheckReport", "check_gradient", "finite_diff_check", "TrainResult", "train",
           "predict_split", "evaluate_split", "historical_average", "write_history", "smoothed",
           "unflatten"]
