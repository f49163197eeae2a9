"""Training loops (BPTT, threshold-guarded, adversarial) and robustness evaluation.

Random streams: for run seed ``s`` and epoch ``e`` the generator for purpose
``k`` (0 = shuffling, 1 = membrane noise, 2 = adversarial inner loop) is
``default_rng(SeedSequence([s, e, k]))``. Evaluation uses ``[s, 1000, k]``
with ``k`` the attack index (0 for the clean column).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import tgo
from .attacks import AttackConfig, pgd, run_attack
from .data import Dataset, batches
from .network import SnnModel, accuracy, forward, loss as cross_entropy, weight_gradients
from .tensor import Tensor

logger = logging.getLogger(__name__)

TRAIN_MODES = ("vanilla", "tgo", "at", "at_tgo")
METRIC_COLUMNS = ("epoch", "mode", "loss", "clean_acc", "constraint", "neighbor_fraction", "lr", "lambda")
EVAL_STREAM = 1000


class TrainingDivergedError(FloatingPointError):
    pass


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def cosine_lr(epoch: int, epoch_max: int, base: float) -> float:
    """``0.5 * base * (1 + cos(pi * epoch / epoch_max))``: base at 0, exactly 0 at epoch_max."""
    if epoch >= epoch_max:
        return 0.0
    return 0.5 * base * (1.0 + math.cos(math.pi * epoch / epoch_max))


@dataclass
class OptimizerState:
    """SGD with heavy-ball momentum and a per-epoch cosine learning rate."""

    base_lr: float = 0.1
    momentum: float = 0.9
    epoch_max: int = 300
    weight_decay: float = 0.0
    epoch: int = 0
    buffers: Optional[List[np.ndarray]] = None

    def lr(self, epoch: Optional[int] = None) -> float:
        return cosine_lr(self.epoch if epoch is None else epoch, self.epoch_max, self.base_lr)

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray], lr: float) -> List[np.ndarray]:
        if self.buffers is None:
            self.buffers = [np.zeros_like(p) for p in params]
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            if self.weight_decay:
                g = g + self.weight_decay * p
            self.buffers[i] = self.momentum * self.buffers[i] + g
            out.append(p - lr * self.buffers[i])
        return out


@dataclass(frozen=True)
class TrainMode:
    name: str = "vanilla"
    attack: AttackConfig = AttackConfig(kind="pgd", epsilon=2 / 255, step=2 / 255, iterations=2)

    def __post_init__(self):
        if self.name not in TRAIN_MODES:
            raise ValueError(f"unknown train mode {self.name!r}; expected one of {TRAIN_MODES}")

    @property
    def guarded(self) -> bool:
        return self.name in ("tgo", "at_tgo")

    @property
    def adversarial(self) -> bool:
        return self.name in ("at", "at_tgo")


def train_epoch(model: SnnModel, data: Dataset, mode: TrainMode, tgo_cfg: tgo.TgoConfig,
                optimizer: OptimizerState, epoch: int, seed: int = 0, batch_size: int = 32):
    """One pass over ``data``; returns ``(updated_model, metrics_row)``."""
    shuffle, noise, adv_rng = (stream(seed, epoch, k) for k in range(3))
    lr = optimizer.lr(epoch)
    lam = tgo.lambda_schedule(min(epoch, tgo_cfg.epoch_max), tgo_cfg.epoch_max, tgo_cfg.lambda_max) \
        if mode.guarded else 0.0
    sums = dict(loss=0.0, correct=0.0, constraint=0.0, neighbor=0.0)
    seen = 0
    for b, idx in enumerate(batches(len(data), batch_size, shuffle)):
        x, y = data.x[idx], data.y[idx]
        if mode.adversarial:
            x = pgd(model, x, y, mode.attack, rng=adv_rng)
        parts = {}

        def objective(record, labels):
            task = cross_entropy(record.logits, labels)
            parts["task"] = task.item()
            if not mode.guarded:
                return task
            cons = tgo.layer_constraints(record, tgo_cfg.margin, tgo_cfg.squared)
            parts["constraint"] = sum(c.item() for c in cons)
            return tgo.total_loss(task, cons, lam)

        grads, value, record = weight_gradients(model, x, y, objective, rng=noise)
        if not np.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads):
            raise TrainingDivergedError(f"non-finite loss at seed={seed} epoch={epoch} batch={b}")
        model = model.with_parameters(optimizer.step(model.parameter_arrays(), grads, lr))
        n = len(idx)
        seen += n
        sums["loss"] += parts["task"] * n
        sums["correct"] += accuracy(record.logits.data, y) * n
        sums["constraint"] += parts.get("constraint", 0.0) * n
        v_th = model.layers[0].neuron.v_th
        sums["neighbor"] += tgo.threshold_neighbor_fraction(record, v_th, tgo_cfg.margin) * n
    optimizer.epoch = epoch + 1
    row = {
        "epoch": epoch,
        "mode": mode.name,
        "loss": sums["loss"] / seen,
        "clean_acc": sums["correct"] / seen,
        "constraint": sums["constraint"] / seen,
        "neighbor_fraction": sums["neighbor"] / seen,
        "lr": lr,
        "lambda": lam,
    }
    return model, row


def fit(model: SnnModel, data: Dataset, mode: TrainMode, tgo_cfg: tgo.TgoConfig,
        optimizer: OptimizerState, epochs: int, seed: int = 0, batch_size: int = 32,
        on_epoch=None):
    """Run ``epochs`` epochs starting at ``optimizer.epoch``; returns ``(model, metric_rows)``."""
    rows = []
    start = optimizer.epoch
    for epoch in range(start, start + epochs):
        model, row = train_epoch(model, data, mode, tgo_cfg, optimizer, epoch, seed, batch_size)
        logger.info("epoch %d %s loss=%.4f acc=%.4f", epoch, mode.name, row["loss"], row["clean_acc"])
        rows.append(row)
        if on_epoch is not None:
            on_epoch(model, row)
    return model, rows


def predict(model, x: np.ndarray, rng=None, batch_size: int = 256) -> np.ndarray:
    out = []
    net = model.frozen()
    for start in range(0, len(x), batch_size):
        out.append(net.logits(Tensor(x[start:start + batch_size]), rng).data)
    return np.concatenate(out)


def evaluate(model, data: Dataset, attack_suite: Sequence[AttackConfig], seed: int = 0,
             batch_size: int = 256) -> Dict[str, float]:
    """Accuracy (percent) on clean inputs and under each attack, keyed by column name."""
    table = {"clean": 100.0 * accuracy(predict(model, data.x, stream(seed, EVAL_STREAM, 0)), data.y)}
    for k, cfg in enumerate(attack_suite, start=1):
        attack_rng = stream(seed, EVAL_STREAM, k, 0)
        adv = np.concatenate([run_attack(model, data.x[s:s + batch_size], data.y[s:s + batch_size], cfg, attack_rng)
                              for s in range(0, len(data), batch_size)])
        logits = predict(model, adv, stream(seed, EVAL_STREAM, k, 1))
        table[cfg.label] = 100.0 * accuracy(logits, data.y)
    return table


def recorded_forward(model: SnnModel, x: np.ndarray, rng=None):
    """Forward pass with potentials recorded and no tape (weights frozen)."""
    return forward(model.frozen(), x, record=True, rng=rng)
