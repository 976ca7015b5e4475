"""Adam training of the causal CNN with best-validation model selection."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..exceptions import DivergedLoss, EmptyInput, InvalidConfig
from ..signals import Recording
from .cnn import CnnModel, cnn_forward, cnn_gradients

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    #: samples per training window
    batch_length: int = 256
    #: windows averaged per optimizer step
    batch_size: int = 8
    epochs: int = 60
    #: optimizer steps per epoch; None covers the training samples about once
    steps_per_epoch: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    channels: int = 16
    kernel_size: int = 4
    n_blocks: int = 3
    #: predictions excluded at the start of each window; None means receptive field - 1
    loss_start: int | None = None

    def validate(self) -> None:
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise InvalidConfig("learning_rate must be finite and >= 0")
        for name in ("batch_length", "batch_size", "epochs", "channels", "kernel_size", "n_blocks"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be >= 1")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise InvalidConfig("steps_per_epoch must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise InvalidConfig("need 0 <= beta1, beta2 < 1 and eps > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: CnnModel
    best_epoch: int
    best_val_mse: float
    #: ``(epoch, train_mse, val_mse)`` rows; epoch 0 is the initial model
    curve: list = field(default_factory=list)

    def save_curve(self, path, provenance: str | None = None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if provenance:
                fh.write(f"# {provenance}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "train_mse", "val_mse"])
            for epoch, tr, va in self.curve:
                writer.writerow([epoch, repr(float(tr)), repr(float(va))])


def as_sequences(data) -> list:
    """Normalize recordings or ``(inputs (6, T), target (T,))`` pairs to pairs of arrays."""
    out = []
    for item in data:
        if isinstance(item, Recording):
            out.append((np.ascontiguousarray(item.inputs().T), np.asarray(item.flow, dtype=np.float64)))
        else:
            x, y = item
            out.append((np.ascontiguousarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64).ravel()))
    return out


def sequence_mse(model: CnnModel, data, loss_start: int = 0) -> float:
    """Pooled MSE over full sequences, ignoring the first ``loss_start`` predictions of each."""
    se, n = 0.0, 0
    for x, y in as_sequences(data):
        r = cnn_forward(model, x)[loss_start:] - y[loss_start:]
        se += float(np.sum(r * r))
        n += r.size
    return se / n if n else float("nan")


def _sample_window(seqs, weights, length, rng):
    s = int(rng.choice(len(seqs), p=weights))
    x, y = seqs[s]
    T = y.size
    if T <= length:
        return x, y
    start = int(rng.integers(0, T - length + 1))
    return x[:, start:start + length], y[start:start + length]


def train_cnn_detailed(train, val, cfg: TrainConfig | None = None, init: CnnModel | None = None) -> TrainResult:
    """Adam over random contiguous windows; keeps the lowest-validation-MSE snapshot.

    The initial model is evaluated as epoch 0, so a run that never improves
    returns it unchanged. Ties keep the earliest epoch.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    seqs = as_sequences(train)
    if not seqs or sum(y.size for _, y in seqs) == 0:
        raise EmptyInput("no training data")
    val_seqs = as_sequences(val) if val else []
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    model = init.copy() if init is not None else CnnModel.initialize(
        seqs[0][0].shape[0], cfg.channels, cfg.kernel_size, cfg.n_blocks, seed=int(rng.integers(2**63)))
    loss_start = model.receptive_field - 1 if cfg.loss_start is None else cfg.loss_start
    lengths = np.array([y.size for _, y in seqs], dtype=np.float64)
    weights = lengths / lengths.sum()
    steps = cfg.steps_per_epoch or max(1, int(round(lengths.sum() / (cfg.batch_length * cfg.batch_size))))

    params = model.parameters()
    m = {k: np.zeros_like(p) for k, p in params.items()}
    v = {k: np.zeros_like(p) for k, p in params.items()}

    def evaluate():
        # without validation data the selection falls back to the training sequences
        return sequence_mse(model, val_seqs if val_seqs else seqs, loss_start)

    train0 = sequence_mse(model, seqs, loss_start)
    best_val = evaluate()
    best, best_epoch = model.copy(), 0
    curve = [(0, train0, best_val)]
    t = 0
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for _ in range(steps):
            batch = [_sample_window(seqs, weights, cfg.batch_length, rng) for _ in range(cfg.batch_size)]
            total = None
            loss_sum = 0.0
            for x, y in batch:
                start = min(loss_start, y.size - 1)
                loss, g = cnn_gradients(model, x, y, start)
                loss_sum += loss
                if total is None:
                    total = g
                else:
                    for k in total:
                        total[k] += g[k]
            loss = loss_sum / len(batch)
            if not math.isfinite(loss):
                raise DivergedLoss(f"training loss became {loss} at epoch {epoch}")
            losses.append(loss)
            t += 1
            c1 = 1.0 - cfg.beta1**t
            c2 = 1.0 - cfg.beta2**t
            for k, p in params.items():
                grad = total[k] / len(batch)
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad * grad
                p -= cfg.learning_rate * (m[k] / c1) / (np.sqrt(v[k] / c2) + cfg.eps)
        train_mse = float(np.mean(losses))
        val_mse = evaluate()
        if not math.isfinite(val_mse):
            raise DivergedLoss(f"validation loss became {val_mse} at epoch {epoch}")
        curve.append((epoch, train_mse, val_mse))
        log.info("epoch %d train %.6g val %.6g", epoch, train_mse, val_mse)
        if val_mse < best_val:
            best_val, best, best_epoch = val_mse, model.copy(), epoch
    best.meta.update({"best_epoch": best_epoch, "best_val_mse": best_val})
    return TrainResult(best, best_epoch, best_val, curve)


def train_cnn(train, val, cfg: TrainConfig | None = None, init: CnnModel | None = None) -> CnnModel:
    """Train and return the best-validation model; see :func:`train_cnn_detailed`."""
    return train_cnn_detailed(train, val, cfg, init).model
