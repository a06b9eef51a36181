"""Parameter containers built on :mod:`svcflow.nn.tensor`."""

from __future__ import annotations

import numpy as np

from ..errors import SchemaError
from . import tensor as T
from .tensor import Parameter, Tensor


class Module:
    """Attribute-walking parameter registry.

    Parameters are discovered from instance attributes that are
    :class:`Parameter`, :class:`Module`, or lists of modules, in attribute
    insertion order, so names are stable across runs.
    """

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict, strict: bool = True) -> None:
        params = dict(self.named_parameters())
        missing = [n for n in params if n not in state]
        if strict and missing:
            raise SchemaError(f"checkpoint lacks parameters: {missing[:5]}")
        for name, p in params.items():
            if name not in state:
                continue
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise SchemaError(f"parameter {name}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.data = value.astype(p.dtype, copy=True)

    def astype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())


def uniform_fan_in(rng, shape, fan_in, dtype=np.float64):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, d_in, d_out, rng, bias=True, dtype=np.float64, zero_init=False):
        w = np.zeros((d_in, d_out), dtype) if zero_init else uniform_fan_in(rng, (d_in, d_out), d_in, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(d_out, dtype), decay=False) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, dim, dtype=np.float64, eps=1e-5):
        self.gamma = Parameter(np.ones(dim, dtype), decay=False)
        self.beta = Parameter(np.zeros(dim, dtype), decay=False)
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.eps) * self.gamma + self.beta


class Conv1d(Module):
    """Channels-last grouped convolution with 'same' padding."""

    def __init__(self, c_in, c_out, kernel, rng, groups=1, bias=True, dtype=np.float64, zero_init=False):
        shape = (c_out, c_in // groups, kernel)
        fan_in = (c_in // groups) * kernel
        w = np.zeros(shape, dtype) if zero_init else uniform_fan_in(rng, shape, fan_in, dtype)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(c_out, dtype), decay=False) if bias else None
        self.groups = groups

    def __call__(self, x):
        return T.conv1d(x, self.weight, self.bias, padding="same", groups=self.groups)


def sinusoidal_embedding(positions, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Transformer-style sin/cos features, shape ``(len(positions), dim)``."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / max(half, 1))
    args = positions[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb


__all__ = ["Conv1d", "LayerNorm", "Linear", "Module", "Tensor", "sinusoidal_embedding", "uniform_fan_in"]
