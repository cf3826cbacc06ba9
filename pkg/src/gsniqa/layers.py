"""Parameterised layers: CDC convolution, spatial attention, batch norm."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor


class Module:
    """Minimal container with an ordered parameter/buffer registry.

    Parameters are discovered by walking attributes in assignment order, so
    the registry order (and therefore checkpoint layout) is deterministic.
    """

    training: bool = True

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and not value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_buffers(prefix + name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{prefix}{name}.{i}.")

    def state(self) -> dict[str, Tensor]:
        """Parameters followed by buffers, in registry order."""
        out = dict(self.named_parameters())
        out.update(self.named_buffers())
        return out

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def kaiming_uniform_(weight: Tensor, fan_in: int, rng: np.random.Generator) -> None:
    bound = math.sqrt(6.0 / fan_in)
    weight.data[...] = rng.uniform(-bound, bound, size=weight.shape)


class Conv2d(Module):
    """Vanilla convolution; used for the attention gates."""

    def __init__(self, in_ch: int, out_ch: int, k: int, stride: int = 1, padding: Optional[int] = None,
                 dtype=np.float64):
        if k % 2 == 0:
            raise ContractError(f"kernel size must be odd, got {k}")
        self.weight = _param((out_ch, in_ch, k, k), dtype)
        self.bias = _param((out_ch,), dtype)
        self.stride = stride
        self.padding = k // 2 if padding is None else padding

    @property
    def fan_in(self) -> int:
        _, c, k, _ = self.weight.shape
        return c * k * k

    def init_parameters(self, rng: np.random.Generator) -> None:
        kaiming_uniform_(self.weight, self.fan_in, rng)
        self.bias.data[...] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class CDCConv2d(Conv2d):
    """Central difference convolution.

    Computes ``sum_n w(p_n) x(p_0 + p_n) - theta * sum_n w(p_n) x(p_0) + b``
    per output channel, where the second sum runs over the kernel taps of
    each input channel separately.  Instead of a second pass over the input
    the central term is folded into the kernel: the per-(out, in) tap sum,
    scaled by ``theta``, is subtracted from the centre tap.  That gives one
    convolution whose windows are aligned exactly like the vanilla ones, and
    a centre that falls in the zero padding contributes nothing.

    ``theta == 0`` takes the plain ``conv2d`` path untouched.
    """

    def __init__(self, in_ch: int, out_ch: int, k: int = 3, stride: int = 1, padding: Optional[int] = None,
                 theta: float = 0.7, dtype=np.float64):
        super().__init__(in_ch, out_ch, k, stride, padding, dtype)
        if not 0.0 <= theta <= 1.0:
            raise ContractError(f"theta must lie in [0, 1], got {theta}")
        self.theta = float(theta)
        centre = np.zeros((1, 1, k, k), dtype=dtype)
        centre[0, 0, k // 2, k // 2] = 1.0
        self._centre = centre

    def effective_weight(self) -> Tensor:
        tap_sum = self.weight.sum(axis=(2, 3), keepdims=True)
        return self.weight - tap_sum * Tensor(self._centre * self.theta)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.weight.shape[1]:
            raise DimensionError(f"CDC layer expects {self.weight.shape[1]} channels, got input {x.shape}")
        if self.theta == 0.0:
            return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)
        return T.conv2d(x, self.effective_weight(), self.bias, self.stride, self.padding)


class SpatialAttention(Module):
    """Per-pixel gate ``sigmoid(conv([mean_c F, max_c F]))`` multiplied back onto ``F``."""

    def __init__(self, k: int = 7, dtype=np.float64):
        if k not in (3, 5, 7):
            raise ContractError(f"attention kernel must be 3, 5 or 7, got {k}")
        self.gate = Conv2d(2, 1, k, padding=k // 2, dtype=dtype)

    def init_parameters(self, rng: np.random.Generator) -> None:
        self.gate.init_parameters(rng)

    def gate_map(self, f: Tensor) -> Tensor:
        if f.ndim != 4 or f.shape[1] < 1:
            raise DimensionError(f"spatial attention expects [N, C>=1, H, W], got {f.shape}")
        pooled = T.concat([f.mean(axis=1, keepdims=True), f.max(axis=1, keepdims=True)], axis=1)
        return T.sigmoid(self.gate(pooled))

    def forward(self, f: Tensor) -> Tensor:
        return f * self.gate_map(f)


class BatchNorm2d(Module):
    """Batch normalisation over (N, H, W) per channel.

    Running variance is updated with the unbiased batch variance; the
    normalisation itself uses the biased one.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float64):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = Tensor(np.zeros(channels, dtype=dtype))
        self.running_var = Tensor(np.ones(channels, dtype=dtype))
        self.eps = eps
        self.momentum = momentum

    def init_parameters(self, rng: np.random.Generator) -> None:
        self.gamma.data[...] = 1.0
        self.beta.data[...] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.gamma.shape[0]:
            raise DimensionError(f"batch norm over {self.gamma.shape[0]} channels got {x.shape}")
        c = x.shape[1]
        gamma = self.gamma.data.reshape(1, c, 1, 1)
        beta = self.beta.data.reshape(1, c, 1, 1)

        if not self.training:
            scale = gamma / np.sqrt(self.running_var.data.reshape(1, c, 1, 1) + self.eps)
            xhat = (x.data - self.running_mean.data.reshape(1, c, 1, 1)) / \
                np.sqrt(self.running_var.data.reshape(1, c, 1, 1) + self.eps)

            def _bw_eval(g):
                return g * scale, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

            return T._make(xhat * gamma + beta, (x, self.gamma, self.beta), _bw_eval, "batchnorm_eval")

        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise ContractError("training-mode batch norm needs at least two values per channel")
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = xc * inv_std

        mom = self.momentum
        self.running_mean.data[...] = (1 - mom) * self.running_mean.data + mom * mu.reshape(c)
        self.running_var.data[...] = (1 - mom) * self.running_var.data + mom * var.reshape(c) * m / (m - 1)

        def _bw(g):
            gxhat = g * gamma
            gx = inv_std * (gxhat - gxhat.mean(axis=(0, 2, 3), keepdims=True)
                            - xhat * (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True))
            return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

        return T._make(xhat * gamma + beta, (x, self.gamma, self.beta), _bw, "batchnorm")


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, dtype=np.float64):
        self.weight = _param((out_features, in_features), dtype)
        self.bias = _param((out_features,), dtype)

    def init_parameters(self, rng: np.random.Generator) -> None:
        kaiming_uniform_(self.weight, self.weight.shape[1], rng)
        self.bias.data[...] = 0.0

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


def init_parameters(layer: Module, rng: np.random.Generator) -> None:
    """Initialise every sub-layer in registry order from one generator."""
    for m in layer.modules():
        if isinstance(m, (Conv2d, BatchNorm2d, Linear)):
            m.init_parameters(rng)
