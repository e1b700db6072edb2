"""Mini-batch SGD training and evaluation loops."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .models import Network
from .nn import sgd_step, softmax_cross_entropy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    lr: float = 0.1
    batch: int = 32
    seed: int = 0


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float


def train(net: Network, data: Dataset, cfg: TrainConfig = TrainConfig()) -> list[EpochMetrics]:
    """Train ``net`` in place; the shuffle order is drawn from ``cfg.seed``."""
    if cfg.batch < 1 or cfg.epochs < 0:
        raise ValueError(f"invalid training config {cfg}")
    if not len(data):
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    images = data.images.astype(net.dtype, copy=False)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(data))
        total_loss, correct = 0.0, 0
        for start in range(0, len(order), cfg.batch):
            idx = order[start : start + cfg.batch]
            logits = net.forward(images[idx], keep=True)
            correct += int((logits.argmax(axis=1) == data.labels[idx]).sum())
            loss, grad = softmax_cross_entropy(logits, data.labels[idx])
            grads, _ = net.backward(grad)
            net.params = sgd_step(net.params, grads, cfg.lr)
            total_loss += loss * len(idx)
        m = EpochMetrics(epoch, total_loss / len(order), correct / len(order))
        log.info("epoch %d loss %.4f train-acc %.4f", m.epoch, m.loss, m.accuracy)
        history.append(m)
    return history


def accuracy(net: Network, data: Dataset) -> float:
    if not len(data):
        return float("nan")
    return float(np.mean(net.predict(data.images) == data.labels))
