"""Parameterized layers over the functional ops.

Layers own their parameter tensors (and, for batchnorm, the running-statistic
buffers, which are plain arrays excluded from gradient tracking).  Weight
initialization draws from a caller-supplied Generator so model construction is
reproducible from a single seed.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor


class Conv2d:
    def __init__(self, in_ch, out_ch, kernel=3, padding="same", *, rng, dtype=np.float32):
        fan_in = in_ch * kernel * kernel
        std = np.sqrt(2.0 / fan_in)
        self.weight = Tensor(
            rng.normal(0.0, std, size=(out_ch, in_ch, kernel, kernel)).astype(dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, padding=self.padding)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def buffers(self):
        return []


class ConvTranspose2x2:
    """Learned 2x upsampling (stride-2 transposed 2x2 convolution)."""

    def __init__(self, in_ch, out_ch, *, rng, dtype=np.float32):
        std = np.sqrt(2.0 / (in_ch * 4))
        self.weight = Tensor(
            rng.normal(0.0, std, size=(in_ch, out_ch, 2, 2)).astype(dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv_transpose2x2(x, self.weight, self.bias)

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def buffers(self):
        return []


class BatchNorm2d:
    def __init__(self, channels, momentum=0.9, eps=1e-5, *, dtype=np.float32):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.batchnorm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training,
            momentum=self.momentum,
            eps=self.eps,
        )

    def parameters(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


class Dropout:
    """Seeded dropout; each training call consumes the next mask from its stream."""

    def __init__(self, rate, seed=0):
        self.rate = rate
        self.rng = np.random.default_rng(seed)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.dropout(x, self.rate, training, self.rng)

    def parameters(self):
        return []

    def buffers(self):
        return []
