"""Parameter containers and the layers used by the encoder, decoder, actor and critics."""
from __future__ import annotations

import math

import numpy as np

from ..errors import DimensionError
from . import tensor as T
from .tensor import Tensor


class Module:
    """Collects parameters from attributes in definition order."""

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) ^ set(state))
            raise KeyError(f"parameter name mismatch: {missing[:5]}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"{name}: expected {p.shape}, got {value.shape}")
            p.data[...] = value

    def copy_from(self, other: "Module") -> None:
        for (_, dst), (_, src) in zip(self.named_parameters(), other.named_parameters()):
            dst.data[...] = src.data


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(n_in)
        self.weight = Tensor(_uniform(rng, (n_in, n_out), bound), requires_grad=True)
        self.bias = Tensor(_uniform(rng, (n_out,), bound), requires_grad=True)

    def __call__(self, x):
        return T.matmul(x, self.weight) + self.bias


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, stride, padding, rng):
        bound = 1.0 / math.sqrt(c_in * kernel * kernel)
        self.weight = Tensor(_uniform(rng, (c_out, c_in, kernel, kernel), bound), requires_grad=True)
        self.bias = Tensor(_uniform(rng, (c_out,), bound), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, kernel, stride, padding, rng):
        bound = 1.0 / math.sqrt(c_out * kernel * kernel)
        self.weight = Tensor(_uniform(rng, (c_in, c_out, kernel, kernel), bound), requires_grad=True)
        self.bias = Tensor(_uniform(rng, (c_out,), bound), requires_grad=True)
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class MLP(Module):
    """Stack of Linear layers with relu between them and a linear head."""

    def __init__(self, n_in: int, hidden: int, n_out: int, depth: int, rng):
        sizes = [n_in] + [hidden] * depth + [n_out]
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x):
        for layer in self.layers[:-1]:
            x = T.relu(layer(x))
        return self.layers[-1](x)
