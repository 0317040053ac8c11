"""Mini-batch training loop."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..core import RandomStream
from ..errors import EmptyDataset, ShapeError
from .layers import softmax_xent_batch
from .model import TinyResNet
from .optim import SGDConfig, lr_at, sgd_step

log = logging.getLogger(__name__)

# (image_hwc, rng) -> image_hwc, applied to each example every epoch.
Transform = Callable[[np.ndarray, RandomStream], np.ndarray]


@dataclass
class TrainResult:
    model: TinyResNet
    loss_history: list[float]
    best_model: TinyResNet | None = None
    validation_history: list[float] = field(default_factory=list)
    best_epoch: int | None = None


def stack_images(images) -> np.ndarray:
    """(N, H, W, C) tensors -> contiguous (N, C, H, W) float64."""
    images = list(images) if not isinstance(images, np.ndarray) else images
    if len(images) == 0:
        raise EmptyDataset("no training examples")
    shapes = {np.shape(img) for img in images}
    if len(shapes) != 1:
        raise ShapeError(f"inconsistent example shapes: {sorted(shapes)}")
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeError(f"expected (H, W, C) examples, got shape {arr.shape[1:]}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("training examples contain non-finite values")
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2))


def canonical_order(x: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Content-derived ordering, so the input storage order does not matter."""
    keys = [
        hashlib.sha1(np.int64(labels[i]).tobytes() + x[i].tobytes()).digest()
        for i in range(x.shape[0])
    ]
    return np.array(sorted(range(len(keys)), key=keys.__getitem__), dtype=np.intp)


def evaluate_loss(model: TinyResNet, x: np.ndarray, labels: np.ndarray, batch_size: int = 64) -> float:
    total = 0.0
    for start in range(0, x.shape[0], batch_size):
        xb, yb = x[start:start + batch_size], labels[start:start + batch_size]
        loss, _ = softmax_xent_batch(model.forward(xb), yb)
        total += loss * xb.shape[0]
    return total / x.shape[0]


def predict(model: TinyResNet, images, batch_size: int = 64) -> np.ndarray:
    x = stack_images(images)
    out = [model.forward(x[s:s + batch_size]).argmax(axis=1) for s in range(0, x.shape[0], batch_size)]
    return np.concatenate(out)


def train(images, labels, config: SGDConfig, rng: RandomStream | None = None,
          validation=None, transform: Transform | None = None,
          model: TinyResNet | None = None, **arch) -> TrainResult:
    """Train a :class:`TinyResNet` on ``(H, W, C)`` tensors.

    ``validation`` is an optional ``(images, labels)`` pair; when given, the
    parameters with the lowest validation loss are returned as ``best_model``.
    Extra keyword arguments go to :meth:`TinyResNet.build`.
    """
    rng = rng if rng is not None else RandomStream(config.seed)
    x = stack_images(images)
    y = np.asarray(labels, dtype=np.intp)
    if y.shape != (x.shape[0],):
        raise ShapeError(f"{x.shape[0]} examples but {y.size} labels")
    order = canonical_order(x, y)
    x, y = x[order], y[order]

    if model is None:
        init_rng = rng.spawn("init").generator
        model = TinyResNet.build(init_rng, in_channels=x.shape[1], **arch)
    params = model.parameters()
    velocity = {name: np.zeros_like(p) for name, p in params.items()}

    if validation is not None:
        vx = stack_images(validation[0])
        vy = np.asarray(validation[1], dtype=np.intp)
    best_loss, best_model, best_epoch = np.inf, None, None
    history, val_history = [], []

    n = x.shape[0]
    for epoch in range(config.epochs):
        rate = lr_at(epoch, config)
        perm = rng.spawn("shuffle", epoch).permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            xb = x[idx]
            if transform is not None:
                xb = np.stack([
                    transform(xb[j].transpose(1, 2, 0), rng.spawn("augment", epoch, int(i))).transpose(2, 0, 1)
                    for j, i in enumerate(idx)
                ])
            logits, cache = model.forward(xb, return_cache=True)
            loss, dlogits = softmax_xent_batch(logits, y[idx])
            grads = model.backward(dlogits, cache)
            for name, p in params.items():
                p[...], velocity[name] = sgd_step(p, grads[name], velocity[name], rate, config.momentum)
            epoch_loss += loss * len(idx)
        history.append(epoch_loss / n)

        if validation is not None:
            vloss = evaluate_loss(model, vx, vy)
            val_history.append(vloss)
            if vloss < best_loss:
                best_loss, best_model, best_epoch = vloss, model.copy(), epoch
        log.debug("epoch %d lr %.4g loss %.5f", epoch, rate, history[-1])

    return TrainResult(model, history, best_model, val_history, best_epoch)
