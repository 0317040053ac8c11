"""From-scratch residual classifier: layers, model, optimizer, training."""

from .layers import ConvLayer, conv_backward, conv_forward, init_conv, softmax, softmax_xent
from .model import ResidualBlock, TinyResNet, block_backward, block_forward, backward, loss_and_gradients
from .optim import SGDConfig, lr_at, sgd_step
from .training import TrainResult, predict, train

__all__ = [
    "ConvLayer", "ResidualBlock", "SGDConfig", "TinyResNet", "TrainResult",
    "backward", "block_backward", "block_forward", "conv_backward", "conv_forward",
    "init_conv", "loss_and_gradients", "lr_at", "predict", "sgd_step", "softmax",
    "softmax_xent", "train",
]
