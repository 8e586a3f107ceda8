"""Minimal reverse-mode autodiff over dense numpy tensors, plus the layer set,
optimizer, and checkpoint format used by the segmentation models."""

from .tensor import Tensor, no_grad
from . import ops
from .layers import BatchNorm2d, Conv2d, ConvTranspose2x2, Dropout
from .optim import Adam
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tensor",
    "no_grad",
    "ops",
    "Conv2d",
    "ConvTranspose2x2",
    "BatchNorm2d",
    "Dropout",
    "Adam",
    "save_checkpoint",
    "load_checkpoint",
]
