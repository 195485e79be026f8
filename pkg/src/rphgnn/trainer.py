"""Mini-batch training with validation-driven early stopping, metrics, and timing."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .encoder import (
    EncoderConfig,
    group_shapes,
    init_params,
    loss_and_grads,
    predict_logits,
)
from .hetgraph import derive_seed

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 3e-3
    batch_size: int = 10000
    max_epochs: int = 200
    patience: int = 30
    seed: int = 0
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Metrics:
    macro_f1: float
    micro_f1: float
    accuracy: float

    def to_dict(self) -> dict:
        return asdict(self)


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def classification_metrics(y_true, y_pred, n_classes: int | None = None) -> Metrics:
    """Macro-F1 over classes present in truth or predictions; micro-F1 = accuracy."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        return Metrics(0.0, 0.0, 0.0)
    if n_classes is None:
        n_classes = int(max(y_true.max(), y_pred.max())) + 1
    cm = confusion_matrix(y_true, y_pred, n_classes)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    present = (support + predicted) > 0
    denom = support + predicted
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    acc = float(tp.sum() / y_true.size)
    return Metrics(float(f1[present].mean()), acc, acc)


def as_group_arrays(groups) -> list[np.ndarray]:
    """Accept GroupTensors or (K, N, d) arrays; return float32 arrays."""
    out = []
    for g in groups:
        arr = g.stacked() if hasattr(g, "stacked") else np.asarray(g)
        out.append(np.ascontiguousarray(arr, dtype=np.float32))
    return out


def evaluate(params, groups, labels, indices, cfg: EncoderConfig, batch_size=10000) -> Metrics:
    groups = as_group_arrays(groups)
    indices = np.asarray(indices, dtype=np.int64)
    logits = predict_logits(params, groups, cfg, indices, batch_size)
    pred = logits.argmax(axis=1) if len(indices) else np.zeros(0, dtype=np.int64)
    return classification_metrics(np.asarray(labels)[indices], pred, cfg.num_classes)


class Adam:
    """First-order adaptive-moment update over a parameter dict."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale = self.lr * np.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        for k, p in params.items():
            g = grads[k]
            if self.weight_decay:
                g = g + self.weight_decay * p
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p -= (scale * self.m[k] / (np.sqrt(self.v[k]) + self.eps)).astype(p.dtype)


def run_epoch(params, opt, groups, labels, train_idx, cfg, train_cfg, epoch) -> float:
    shuffle_rng = np.random.default_rng(derive_seed(train_cfg.seed, "shuffle", epoch))
    drop_rng = np.random.default_rng(derive_seed(train_cfg.seed, "dropout", epoch))
    order = shuffle_rng.permutation(train_idx)
    total, seen = 0.0, 0
    for s in range(0, len(order), train_cfg.batch_size):
        b = np.sort(order[s:s + train_cfg.batch_size])
        batch = [g[:, b] for g in groups]
        loss, grads = loss_and_grads(batch, labels[b], params, cfg, drop_rng)
        opt.step(params, grads)
        total += loss * len(b)
        seen += len(b)
    return total / max(seen, 1)


def train(groups, labels, split, enc_cfg: EncoderConfig, train_cfg: TrainConfig,
          params=None, log_every: int = 0):
    """Train the encoder and return (best params, history).

    Model selection uses validation accuracy; training stops after
    ``patience`` epochs without a strict improvement.
    """
    groups = as_group_arrays(groups)
    labels = np.asarray(labels, dtype=np.int64)
    train_idx = np.asarray(split["train"], dtype=np.int64)
    valid_idx = np.asarray(split["valid"], dtype=np.int64)
    if train_idx.size == 0:
        raise ValueError("empty train split")
    if np.intersect1d(train_idx, valid_idx).size:
        raise ValueError("train and valid splits overlap")
    if params is None:
        params = init_params(enc_cfg, group_shapes(groups), seed=train_cfg.seed)
    opt = Adam(params, train_cfg.lr, weight_decay=train_cfg.weight_decay)
    best = {k: v.copy() for k, v in params.items()}
    best_metric, best_epoch, stale = -np.inf, 0, 0
    history = []
    for epoch in range(1, train_cfg.max_epochs + 1):
        t0 = time.perf_counter()
        loss = run_epoch(params, opt, groups, labels, train_idx, enc_cfg, train_cfg, epoch)
        metric = evaluate(params, groups, labels, valid_idx, enc_cfg,
                          train_cfg.batch_size).accuracy if valid_idx.size else -loss
        seconds = time.perf_counter() - t0
        history.append({"epoch": epoch, "train_loss": loss, "valid_metric": metric,
                        "seconds": seconds})
        if log_every and epoch % log_every == 0:
            logger.info("epoch %d loss %.4f valid %.4f", epoch, loss, metric)
        if metric > best_metric:
            best_metric, best_epoch, stale = metric, epoch, 0
            best = {k: v.copy() for k, v in params.items()}
        else:
            stale += 1
            if stale >= train_cfg.patience:
                break
    for h in history:
        h["best_epoch"] = best_epoch
    return best, history


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "valid_metric", "seconds"])
        for h in history:
            w.writerow([h["epoch"], repr(h["train_loss"]), repr(h["valid_metric"]),
                        f"{h['seconds']:.6f}"])


def linear_fit_r2(x, y) -> tuple[float, float, float]:
    """Least-squares line y = a + b x; returns (a, b, R^2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    A = np.stack([np.ones_like(x), x], axis=1)
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (a + b * x)
    ss_tot = ((y - y.mean()) ** 2).sum()
    r2 = 1.0 - (resid**2).sum() / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), float(r2)


class _EpochTimer:
    """One model and optimizer reused across timed epochs over all rows."""

    def __init__(self, groups, enc_cfg: EncoderConfig, train_cfg: TrainConfig):
        self.groups, self.enc_cfg, self.train_cfg = groups, enc_cfg, train_cfg
        n = groups[0].shape[1]
        self.labels = np.arange(n) % enc_cfg.num_classes
        self.idx = np.arange(n)
        self.params = init_params(enc_cfg, group_shapes(groups), seed=train_cfg.seed)
        self.opt = Adam(self.params, train_cfg.lr)
        self.epoch = 0

    def __call__(self) -> float:
        self.epoch += 1
        t0 = time.perf_counter()
        run_epoch(self.params, self.opt, self.groups, self.labels, self.idx,
                  self.enc_cfg, self.train_cfg, self.epoch)
        return time.perf_counter() - t0


def time_epoch(groups, enc_cfg: EncoderConfig, train_cfg: TrainConfig, repeats: int = 5) -> float:
    """Best-of-``repeats`` wall-clock seconds for one training epoch over all rows."""
    timer = _EpochTimer(groups, enc_cfg, train_cfg)
    timer()  # warm-up
    return min(timer() for _ in range(repeats))


def bench_epoch_time(groups, enc_cfg: EncoderConfig, train_cfg: TrainConfig,
                     K_values: Sequence[int] = (1, 2, 4, 8), repeats: int = 5) -> dict:
    """Per-epoch time for each K with N, R and D held fixed.

    Slabs for K beyond what ``groups`` holds are tiled from the available ones.
    Each K is timed best-of-``repeats``.
    """
    base = as_group_arrays(groups)
    timers = []
    for K in K_values:
        gk = [np.ascontiguousarray(np.resize(g, (K,) + g.shape[1:])) for g in base]
        timers.append(_EpochTimer(gk, enc_cfg, train_cfg))
        timers[-1]()  # warm-up
    best = [np.inf] * len(timers)
    # interleave repeats across K so slow drift hits every K alike
    for _ in range(repeats):
        for i, timer in enumerate(timers):
            best[i] = min(best[i], timer())
    rows = [{"K": int(K), "seconds": t} for K, t in zip(K_values, best)]
    a, b, r2 = linear_fit_r2([r["K"] for r in rows], [r["seconds"] for r in rows])
    return {"rows": rows, "intercept": a, "slope": b, "r2": r2,
            "N": int(base[0].shape[1]), "R": len(base),
            "D": int(max(g.shape[2] for g in base))}

