"""Shared training-loop plumbing: configuration, history, early stopping."""

import math
from dataclasses import dataclass, field

import numpy as np


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite; message carries the epoch diagnostic."""


@dataclass
class TrainConfig:
    """Optimization hyperparameters; the seed drives every random stream."""

    seed: int
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    patience: int = 30

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.patience) <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs, batch size, learning rate and patience must all be positive")


@dataclass
class History:
    """Per-epoch composite losses plus the selected (best-validation) epoch."""

    initial_loss: float = math.nan
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf


class EarlyStopper:
    """Tracks the best validation loss and snapshots parameters at that point."""

    def __init__(self, params, patience):
        self.params = params
        self.patience = patience
        self.best = math.inf
        self.best_epoch = -1
        self._snapshot = None
        self._stale = 0

    def update(self, epoch, val_loss):
        """Record one epoch; returns True when patience is exhausted."""
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self._snapshot = {name: p.value.copy() for name, p in self.params.items()}
            self._stale = 0
            return False
        self._stale += 1
        return self._stale >= self.patience

    def restore(self):
        if self._snapshot is not None:
            for name, p in self.params.items():
                p.value = self._snapshot[name].copy()


def minibatches(n, batch_size, rng):
    """Yield index arrays covering 0..n-1 in shuffled order (last batch may be short)."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def check_finite(loss_value, epoch, what):
    if not np.isfinite(loss_value):
        raise TrainingDivergedError(f"{what} loss diverged to {loss_value} at epoch {epoch}")
