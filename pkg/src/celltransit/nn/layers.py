"""Layer containers: parameter-holding modules composed into models.

Initialization is Kaiming-uniform fan-in, drawn from a generator the
caller provides so that model construction is fully seeded.
"""

from __future__ import annotations

import numpy as np

from celltransit.nn import ops
from celltransit.nn.tensor import Tensor


class Module:
    """Lightweight container; children are discovered via attributes."""

    training: bool = True

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def set_training(self, flag: bool):
        for m in self.modules():
            m.training = flag

    def zero_grad(self):
        for _, p in self.named_parameters():
            p.zero_grad()

    def state_arrays(self) -> dict:
        """All persistent arrays: parameters plus batchnorm running stats."""
        out = {name: p.data for name, p in self.named_parameters()}
        for name, m in self.named_modules():
            if isinstance(m, BatchNorm):
                out[f"{name}.running_mean"] = m.running.mean
                out[f"{name}.running_var"] = m.running.var
        return out

    def named_modules(self, prefix: str = ""):
        yield prefix.rstrip("."), self
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Module):
                yield from value.named_modules(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_modules(f"{full}.{i}.")

    def load_state_arrays(self, arrays: dict, strict: bool = True):
        own = self.state_arrays()
        missing = [k for k in own if k not in arrays]
        if strict and missing:
            raise KeyError(f"missing tensors in checkpoint: {missing}")
        for name, p in self.named_parameters():
            if name in arrays:
                p.data[...] = arrays[name].reshape(p.data.shape)
        for name, m in self.named_modules():
            if isinstance(m, BatchNorm):
                if f"{name}.running_mean" in arrays:
                    m.running.mean[...] = arrays[f"{name}.running_mean"]
                    m.running.var[...] = arrays[f"{name}.running_var"]


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float64):
        self.w = Tensor(kaiming_uniform(rng, (in_dim, out_dim), in_dim, dtype),
                        requires_grad=True)
        bound = 1.0 / np.sqrt(in_dim)
        self.b = Tensor(rng.uniform(-bound, bound, size=out_dim).astype(dtype),
                        requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.linear(x, self.w, self.b)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, stride: int,
                 padding: int, rng: np.random.Generator, dtype=np.float64):
        fan_in = in_ch * kernel * kernel
        self.k = Tensor(kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel),
                                        fan_in, dtype), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.k, stride=self.stride, padding=self.padding)


class RunningStats:
    """Exponential-moving batch statistics for batchnorm eval mode."""

    def __init__(self, channels: int, dtype=np.float64):
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)

    def update(self, mean, var, count, momentum):
        unbiased = var * count / max(count - 1, 1)
        self.mean = ((1 - momentum) * self.mean + momentum * mean).astype(
            self.mean.dtype)
        self.var = ((1 - momentum) * self.var + momentum * unbiased).astype(
            self.var.dtype)


class BatchNorm(Module):
    def __init__(self, channels: int, dtype=np.float64, zero_init: bool = False):
        init_scale = 0.0 if zero_init else 1.0
        self.gamma = Tensor(np.full(channels, init_scale, dtype=dtype),
                            requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running = RunningStats(channels, dtype=dtype)
        self.momentum = 0.1
        self.eps = 1e-5

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batchnorm(x, self.gamma, self.beta, self.running,
                             training=self.training, momentum=self.momentum,
                             eps=self.eps)
