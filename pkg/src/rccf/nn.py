"""Parameter containers on top of the tensor core."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from rccf.core import functional as F
from rccf.core.tensor import Tensor
from rccf.errors import CheckpointError


class Module:
    """Base class that discovers parameters through instance attributes.

    Any attribute holding a gradient-carrying :class:`Tensor`, a ``Module``
    or a list of modules is walked in attribute-definition order, which makes
    parameter names (and therefore checkpoints) deterministic.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                yield from _walk_list(value, f"{prefix}{name}.")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if missing:
            raise CheckpointError(f"missing parameter record {missing[0]!r}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise CheckpointError(f"parameter record {name!r} has shape {value.shape}, "
                                      f"model expects {p.shape}")
            p.data = value.copy()


def _walk_list(items, prefix: str) -> Iterator[tuple]:
    for i, item in enumerate(items):
        if isinstance(item, Module):
            yield from item.named_parameters(f"{prefix}{i}.")
        elif isinstance(item, (list, tuple)):
            yield from _walk_list(item, f"{prefix}{i}.")


def param(array) -> Tensor:
    return Tensor(array, requires_grad=True)


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, std: float | None = None):
        std = np.sqrt(1.0 / d_in) if std is None else std
        self.weight = param(rng.normal(0.0, std, size=(d_out, d_in)))
        self.bias = param(np.zeros(d_out))

    def __call__(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, rng: np.random.Generator, c_in: int, c_out: int, kernel: int,
                 stride: int = 1, padding: int | None = None, std: float | None = None):
        fan_in = c_in * kernel * kernel
        std = np.sqrt(2.0 / fan_in) if std is None else std
        self.weight = param(rng.normal(0.0, std, size=(c_out, c_in, kernel, kernel)))
        self.bias = param(np.zeros(c_out))
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)
