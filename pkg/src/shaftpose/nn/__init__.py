"""Minimal differentiable-tensor core: fixed op kit, losses, Adam."""

from .ops import (
    BatchNorm,
    ConcatChannels,
    Conv2d,
    Dense,
    MaxPool2,
    Param,
    ReLU,
    Tanh,
    check_finite,
)
from .losses import smooth_l1, smooth_l1_grad, softmax, softmax_cross_entropy
from .optim import AdamState, LrSchedule, adam_step, poly_decay_lr

__all__ = [
    "AdamState",
    "BatchNorm",
    "ConcatChannels",
    "Conv2d",
    "Dense",
    "LrSchedule",
    "MaxPool2",
    "Param",
    "ReLU",
    "Tanh",
    "adam_step",
    "check_finite",
    "poly_decay_lr",
    "smooth_l1",
    "smooth_l1_grad",
    "softmax",
    "softmax_cross_entropy",
]
