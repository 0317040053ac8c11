"""Residual blocks and the small residual classifier built from them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import N_CLASSES
from ..errors import ShapeError
from .layers import ConvLayer, conv_backward, conv_forward, init_conv, relu, softmax, softmax_xent_batch

# Default body: stem then four blocks, two of them changing width and stride.
DEFAULT_STAGES = ((8, 1), (16, 2), (16, 1), (32, 2))


@dataclass
class ResidualBlock:
    conv1: ConvLayer
    conv2: ConvLayer
    projection: ConvLayer | None = None

    def __post_init__(self):
        if self.conv1.kernel != 3 or self.conv2.kernel != 3:
            raise ShapeError("residual body uses 3x3 convolutions")
        if self.conv2.stride != 1 or self.conv2.in_channels != self.conv1.out_channels:
            raise ShapeError("second body conv must be stride 1 and chain from the first")
        reshapes = self.conv1.stride != 1 or self.conv1.in_channels != self.conv2.out_channels
        if self.projection is None and reshapes:
            raise ShapeError("identity shortcut needs matching input and output shapes")
        if self.projection is not None:
            p = self.projection
            if p.kernel != 1 or p.stride != self.conv1.stride or p.in_channels != self.conv1.in_channels \
                    or p.out_channels != self.conv2.out_channels:
                raise ShapeError("projection must be a 1x1 conv matching the body's stride and widths")

    @property
    def shortcut(self) -> str:
        return "identity" if self.projection is None else "projection"

    def layers(self):
        yield "conv1", self.conv1
        yield "conv2", self.conv2
        if self.projection is not None:
            yield "proj", self.projection


def block_forward(block: ResidualBlock, x: np.ndarray, return_cache: bool = False):
    a1, c1 = conv_forward(block.conv1, x, return_cache=True)
    h = relu(a1)
    f, c2 = conv_forward(block.conv2, h, return_cache=True)
    if block.projection is None:
        s, cp = x, None
    else:
        s, cp = conv_forward(block.projection, x, return_cache=True)
    pre = f + s
    y = relu(pre)
    if return_cache:
        return y, (c1, a1, c2, cp, pre)
    return y


def block_backward(block: ResidualBlock, dy: np.ndarray, cache):
    """Return (dx, grads) where grads maps layer name -> (dW, db)."""
    c1, a1, c2, cp, pre = cache
    dpre = dy * (pre > 0)
    grads = {}
    dh, dw2, db2 = conv_backward(block.conv2, dpre, c2)
    grads["conv2"] = (dw2, db2)
    da1 = dh * (a1 > 0)
    dx, dw1, db1 = conv_backward(block.conv1, da1, c1)
    grads["conv1"] = (dw1, db1)
    if block.projection is None:
        dx = dx + dpre
    else:
        dxs, dwp, dbp = conv_backward(block.projection, dpre, cp)
        grads["proj"] = (dwp, dbp)
        dx = dx + dxs
    return dx, grads


@dataclass
class TinyResNet:
    stem: ConvLayer
    blocks: list[ResidualBlock]
    fc_weights: np.ndarray  # (n_classes, channels)
    fc_biases: np.ndarray
    arch: dict = field(default_factory=dict)

    @classmethod
    def build(cls, rng: np.random.Generator, in_channels: int = 3, stem_width: int = 8,
              stages=DEFAULT_STAGES, n_classes: int = N_CLASSES, residual_gain: float = 0.0,
              head_gain: float = 0.0):
        """Random initialization.

        ``residual_gain`` scales the init bound of each block's second conv and
        ``head_gain`` that of the final affine map. Both default to 0, so every
        block starts as its shortcut and the initial prediction is uniform;
        pass 1.0 for fully random weights (gradient checks do).
        """
        stem = init_conv(rng, in_channels, stem_width, 3)
        blocks, width = [], stem_width
        for out_c, stride in stages:
            conv1 = init_conv(rng, width, out_c, 3, stride)
            conv2 = init_conv(rng, out_c, out_c, 3, 1, gain=residual_gain)
            proj = None
            if stride != 1 or out_c != width:
                proj = init_conv(rng, width, out_c, 1, stride)
            blocks.append(ResidualBlock(conv1, conv2, proj))
            width = out_c
        bound = head_gain * np.sqrt(6.0 / width)
        fc_w = rng.uniform(-bound, bound, size=(n_classes, width))
        arch = {
            "in_channels": in_channels,
            "stem_width": stem_width,
            "stages": [list(s) for s in stages],
            "n_classes": n_classes,
        }
        return cls(stem, blocks, fc_w, np.zeros(n_classes), arch)

    @classmethod
    def from_arch(cls, arch: dict):
        return cls.build(np.random.default_rng(0), arch["in_channels"], arch["stem_width"],
                         tuple(tuple(s) for s in arch["stages"]), arch["n_classes"])

    def named_layers(self):
        yield "stem", self.stem
        for i, block in enumerate(self.blocks):
            for name, layer in block.layers():
                yield f"block{i}.{name}", layer

    def parameters(self) -> dict[str, np.ndarray]:
        """Name -> array, in a fixed order. Arrays are shared, not copied."""
        params = {}
        for name, layer in self.named_layers():
            params[f"{name}.w"] = layer.weights
            params[f"{name}.b"] = layer.biases
        params["fc.w"] = self.fc_weights
        params["fc.b"] = self.fc_biases
        return params

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in self.parameters().items():
            src = values[name]
            if src.shape != arr.shape:
                raise ShapeError(f"{name}: expected shape {arr.shape}, got {src.shape}")
            arr[...] = src

    def copy(self) -> "TinyResNet":
        clone = TinyResNet.from_arch(self.arch)
        clone.load_parameters(self.parameters())
        return clone

    @property
    def n_classes(self) -> int:
        return self.fc_weights.shape[0]

    def forward(self, x: np.ndarray, return_cache: bool = False):
        """Logits for an (N, C, H, W) batch."""
        if x.ndim != 4 or x.shape[1] != self.stem.in_channels:
            raise ShapeError(f"model expects (N, {self.stem.in_channels}, H, W), got {x.shape}")
        a0, cs = conv_forward(self.stem, x, return_cache=True)
        h = relu(a0)
        bcaches = []
        for block in self.blocks:
            h, bc = block_forward(block, h, return_cache=True)
            bcaches.append(bc)
        pooled = h.mean(axis=(2, 3))
        logits = pooled @ self.fc_weights.T + self.fc_biases
        if return_cache:
            return logits, (cs, a0, bcaches, h.shape, pooled)
        return logits

    def backward(self, dlogits: np.ndarray, cache, return_input_grad: bool = False):
        cs, a0, bcaches, hshape, pooled = cache
        grads = {"fc.w": dlogits.T @ pooled, "fc.b": dlogits.sum(axis=0)}
        dpooled = dlogits @ self.fc_weights
        dh = np.broadcast_to(dpooled[:, :, None, None] / (hshape[2] * hshape[3]), hshape).copy()
        for i in reversed(range(len(self.blocks))):
            dh, bgrads = block_backward(self.blocks[i], dh, bcaches[i])
            for name, (dw, db) in bgrads.items():
                grads[f"block{i}.{name}.w"] = dw
                grads[f"block{i}.{name}.b"] = db
        da0 = dh * (a0 > 0)
        dx, dw, db = conv_backward(self.stem, da0, cs)
        grads["stem.w"] = dw
        grads["stem.b"] = db
        ordered = {name: grads[name] for name in self.parameters()}
        if return_input_grad:
            return ordered, dx
        return ordered

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.forward(x))


def loss_and_gradients(model: TinyResNet, x: np.ndarray, labels) -> tuple[float, dict]:
    """Mean cross-entropy of a batch and the gradient of every parameter."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    if labels.shape[0] != x.shape[0]:
        raise ShapeError(f"{x.shape[0]} inputs but {labels.shape[0]} labels")
    logits, cache = model.forward(x, return_cache=True)
    loss, dlogits = softmax_xent_batch(logits, labels)
    return loss, model.backward(dlogits, cache)


backward = loss_and_gradients
