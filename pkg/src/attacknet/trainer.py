"""Adam, early stopping and the epoch loop."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .augment import AugmentSpec, augment
from .data import ArrayData
from .layers import cross_entropy_loss
from .model import Model
from .tensor import Prng, ShapeError

log = logging.getLogger(__name__)


class TrainingError(ValueError):
    pass


def adam_step(params: dict, grads: dict, m: dict, v: dict, t: int,
              lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on ``params``, ``m`` and ``v``."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape or m[name].shape != theta.shape or v[name].shape != theta.shape:
            raise ShapeError(f"Adam shapes disagree for {name}")
        m[name] *= beta1
        m[name] += (1.0 - beta1) * g
        v[name] *= beta2
        v[name] += (1.0 - beta2) * (g * g)
        m_hat = m[name] / c1
        v_hat = v[name] / c2
        theta -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(theta.dtype)


class EarlyStopping:
    """Stop once the monitored loss has failed to strictly decrease for ``patience`` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Record ``loss`` for ``epoch``; returns True when it is a new best."""
        if loss < self.best:
            self.best, self.best_epoch, self.bad_epochs = loss, epoch, 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    stop_reason: str = ""
    best_epoch: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,train_loss,train_acc,val_loss,val_acc\n")
        for r in self.records:
            buf.write(f"{r.epoch},{r.train_loss:.6f},{r.train_acc:.6f},{r.val_loss:.6f},{r.val_acc:.6f}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainLog":
        rows = csv.DictReader(io.StringIO(text))
        return cls([
            EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["train_acc"]),
                        float(r["val_loss"]), float(r["val_acc"]))
            for r in rows
        ])


def evaluate_loss_acc(m: Model, data: ArrayData, batch_size: int = 256) -> tuple[float, float]:
    """Inference-mode mean cross-entropy and accuracy (argmax, ties to class 0)."""
    if len(data) == 0:
        raise TrainingError("cannot evaluate on an empty dataset")
    probs = m.predict_proba(data.images, batch_size)
    loss, _ = cross_entropy_loss(probs, data.labels)
    acc = float(np.mean(probs.argmax(axis=1) == data.labels))
    return loss, acc


def train_epoch(m: Model, data: ArrayData, p: Prng, spec: AugmentSpec | None) -> tuple[float, float]:
    """One shuffled pass with Adam; returns the sample-weighted train loss and accuracy."""
    cfg = m.config
    n = len(data)
    order = p.permutation(n)
    total_loss = 0.0
    correct = 0
    for start in range(0, n, cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        x = data.images[idx]
        if spec is not None:
            x = np.stack([augment(img, spec, p) for img in x])
        y = data.labels[idx]
        probs, cache = m.forward(x, "train", p)
        loss, dlogits = cross_entropy_loss(probs, y)
        grads = m.backward(cache, dlogits)
        m.step += 1
        adam_step(m.params, grads, m.adam_m, m.adam_v, m.step,
                  cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        total_loss += loss * len(idx)
        correct += int(np.sum(probs.argmax(axis=1) == y))
    return total_loss / n, correct / n


def fit(m: Model, train: ArrayData, val: ArrayData, p: Prng, *,
        evaluate: Callable[[Model, ArrayData], tuple[float, float]] = evaluate_loss_acc,
        callback: Callable[[Model, EpochRecord], bool] | None = None) -> tuple[Model, TrainLog]:
    """Train ``m`` in place and return it with the weights of its best-validation epoch.

    Stops at ``max_epochs``, after ``patience`` epochs without a strict
    validation-loss decrease, or when ``callback`` returns True.
    """
    cfg = m.config
    if len(train) == 0 or len(val) == 0:
        raise TrainingError("train and validation splits must be non-empty")
    if len(np.unique(train.labels)) < 2:
        raise TrainingError("training split must contain both classes")
    spec = AugmentSpec.from_config(cfg) if cfg.augment else None
    stopper = EarlyStopping(cfg.patience)
    trainlog = TrainLog()
    best = m.snapshot()
    stop_reason = "max-epochs"
    for epoch in range(1, cfg.max_epochs + 1):
        train_loss, train_acc = train_epoch(m, train, p, spec)
        val_loss, val_acc = evaluate(m, val)
        record = EpochRecord(epoch, train_loss, train_acc, float(val_loss), float(val_acc))
        trainlog.records.append(record)
        if stopper.update(epoch, record.val_loss):
            best = m.snapshot()
        log.debug("epoch %d train_loss=%.4f val_loss=%.4f val_acc=%.4f", epoch, train_loss, val_loss, val_acc)
        if callback is not None and callback(m, record):
            stop_reason = "callback"
            break
        if stopper.should_stop:
            stop_reason = "early-stop"
            break
    m.restore(best)
    trainlog.stop_reason = stop_reason
    trainlog.best_epoch = stopper.best_epoch
    return m, trainlog
