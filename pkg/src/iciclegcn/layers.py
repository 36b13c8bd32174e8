"""Parameter containers for dense and convolutional layers."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


def he_uniform(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """Kaiming-uniform weights; keeps ReLU activations at unit scale through deep stacks."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Dense:
    """``x @ W + b``; Kaiming-uniform weights, uniform(±1/sqrt(fan_in)) biases."""

    def __init__(self, name: str, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = Parameter(he_uniform((n_in, n_out), n_in, rng), f"{name}.W")
        self.bias = Parameter(rng.uniform(-bound, bound, size=n_out), f"{name}.b") if bias else None

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        return T.add_bias(out, self.bias) if self.bias is not None else out

    def parameters(self) -> list[Parameter]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]


class Conv:
    def __init__(self, name: str, c_in: int, c_out: int, size: int, rng: np.random.Generator):
        fan_in = c_in * size * size
        bound = 1.0 / np.sqrt(fan_in)
        self.kernel = Parameter(he_uniform((c_out, c_in, size, size), fan_in, rng), f"{name}.K")
        self.bias = Parameter(rng.uniform(-bound, bound, size=c_out), f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        return T.add_channel_bias(T.conv2d(x, self.kernel, stride=1), self.bias)

    def parameters(self) -> list[Parameter]:
        return [self.kernel, self.bias]


def xavier_uniform(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


def named(params: list[Parameter]) -> dict[str, Parameter]:
    out: dict[str, Parameter] = {}
    for p in params:
        if p.name in out:
            raise ValueError(f"duplicate parameter name {p.name!r}")
        out[p.name] = p
    return out
