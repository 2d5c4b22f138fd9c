"""Parameterized building blocks: convolution and batch normalization.

Layers own their ``Parameter`` tensors plus any non-trainable state and expose
``named_params`` / ``named_state`` so graphs can enumerate a stable, fully
named array inventory for optimizers and weight files.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autograd import Parameter, Tensor


def he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D:
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        *,
        padding: str = "same",
        use_bias: bool = True,
        dtype=np.float32,
    ):
        fan_in = kernel_size * kernel_size * in_channels
        self.padding = padding
        self.weight = Parameter(
            he_uniform(rng, (kernel_size, kernel_size, in_channels, out_channels), fan_in, dtype)
        )
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if use_bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, padding=self.padding, bias=self.bias)

    def named_params(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        if self.bias is not None:
            yield f"{prefix}.bias", self.bias

    def named_state(self, prefix: str):
        return
        yield  # no non-trainable state


class BatchNorm:
    def __init__(self, channels: int, *, momentum: float = 0.9, eps: float = 1e-5, dtype=np.float32):
        self.scale = Parameter(np.ones(channels, dtype=dtype))
        self.shift = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return ops.batchnorm(
            x,
            self.scale,
            self.shift,
            self.running_mean,
            self.running_var,
            train,
            momentum=self.momentum,
            eps=self.eps,
        )

    def named_params(self, prefix: str):
        yield f"{prefix}.scale", self.scale
        yield f"{prefix}.shift", self.shift

    def named_state(self, prefix: str):
        yield f"{prefix}.running_mean", self.running_mean
        yield f"{prefix}.running_var", self.running_var
