"""Momentum SGD and its step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import RangeError, ShapeError


@dataclass(frozen=True)
class SGDConfig:
    initial_rate: float = 0.1
    decay_factor: float = 0.1
    decay_every: int = 50
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.initial_rate <= 0 or self.decay_factor <= 0:
            raise RangeError("learning rate and decay factor must be positive")
        if self.decay_every < 1 or self.epochs < 1 or self.batch_size < 1:
            raise RangeError("decay_every, epochs and batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise RangeError("momentum must lie in [0, 1)")


def lr_at(epoch: int, config: SGDConfig) -> float:
    if not 0 <= epoch < config.epochs:
        raise RangeError(f"epoch {epoch} outside [0, {config.epochs})")
    return config.initial_rate * config.decay_factor ** (epoch // config.decay_every)


def sgd_step(weights, grads, velocity, rate: float, momentum: float):
    """One heavy-ball step: v' = m v - rate g; w' = w + v'."""
    weights, grads, velocity = (np.asarray(a, dtype=np.float64) for a in (weights, grads, velocity))
    if not weights.shape == grads.shape == velocity.shape:
        raise ShapeError(f"shape mismatch: {weights.shape}, {grads.shape}, {velocity.shape}")
    new_velocity = momentum * velocity - rate * grads
    return weights + new_velocity, new_velocity
