"""
nn.py
-----
Small module toolkit on top of the autograd engine.

Contents:
- Module: parameter container; discovers Parameters and sub-Modules from attributes
  (including lists of either) in definition order and assigns dotted names.
- Linear: x @ W + b with Glorot-uniform W and zero b.
- LayerNormLayer: layer_norm with unit gain and zero bias.
- MLP: Linear -> GELU -> Linear.
"""

from __future__ import annotations

import math
from typing import Iterator, List, Tuple

import numpy as np

from .autograd import DTYPE, Parameter, Tensor, add, gelu, layer_norm, matmul, track


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(DTYPE)


class Module:
    """Base class; subclasses implement `forward`."""

    def forward(self, *args, **kwargs):
        raise NotImplementedError(type(self).__name__)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[Tuple[str, object]]:
        for attr, value in vars(self).items():
            if isinstance(value, (Parameter, Module)):
                yield attr, value
            elif isinstance(value, list) and value and all(isinstance(v, (Parameter, Module)) for v in value):
                for i, item in enumerate(value):
                    yield f"{attr}.{i}", item

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Parameter]]:
        out: List[Tuple[str, Parameter]] = []
        for attr, value in self._children():
            path = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                out.append((path, value))
            else:
                out.extend(value.named_parameters(path + "."))
        return out

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self, prefix: str = "") -> None:
        """Give every Parameter its dotted attribute path as `name`."""
        for path, param in self.named_parameters(prefix):
            param.name = path

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter("weight", Tensor(glorot_uniform(rng, in_dim, out_dim)))
        self.bias = Parameter("bias", Tensor(np.zeros(out_dim, dtype=DTYPE))) if bias else None
        self.in_dim, self.out_dim = in_dim, out_dim

    def forward(self, x: Tensor) -> Tensor:
        y = matmul(x, track(self.weight))
        return add(y, track(self.bias)) if self.bias is not None else y


class LayerNormLayer(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gain = Parameter("gain", Tensor(np.ones(dim, dtype=DTYPE)))
        self.bias = Parameter("bias", Tensor(np.zeros(dim, dtype=DTYPE)))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, track(self.gain), track(self.bias), self.eps)


class MLP(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator):
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))
