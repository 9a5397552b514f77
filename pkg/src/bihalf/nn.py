"""Stateful layer wrappers around :mod:`bihalf.tensor` ops."""

from __future__ import annotations

from typing import Iterator, List, Tuple

import numpy as np

from . import tensor as T
from .tensor import DTYPE, LatentTensor


class StateError(RuntimeError):
    pass


class Module:
    training = True

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def parameters(self) -> Iterator[Tuple[str, LatentTensor]]:
        return iter(())

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    __call__ = forward


class ReLU(Module):
    def forward(self, x):
        y, self._cache = T.relu_forward(x)
        return y

    def backward(self, dy):
        return T.relu_backward(dy, self._cache)


class SignActivation(Module):
    """Binary activation; records its last output for entropy diagnostics."""

    def forward(self, x):
        y, self._cache = T.sign_forward(x)
        self.last_output = y
        return y

    def backward(self, dy):
        return T.hardtanh_backward_gate(dy, self._cache)


class MaxPool2d(Module):
    def __init__(self, k: int = 2):
        self.k = k

    def forward(self, x):
        y, self._cache = T.maxpool_forward(x, self.k)
        return y

    def backward(self, dy):
        return T.maxpool_backward(dy, self._cache)


class Flatten(Module):
    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class BatchNorm(Module):
    """Batch normalisation over channel axis 1 (works for 2-D and 4-D input)."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = LatentTensor(np.ones(channels, dtype=DTYPE))
        self.beta = LatentTensor(np.zeros(channels, dtype=DTYPE))
        self.running = (np.zeros(channels, dtype=DTYPE), np.ones(channels, dtype=DTYPE))
        self.eps, self.momentum = eps, momentum

    def forward(self, x):
        y, self._cache = T.batchnorm_forward(
            x, self.gamma.data, self.beta.data, self.eps, self.running,
            self.momentum, self.training)
        self.last_output = y
        return y

    def backward(self, dy):
        dx, dg, db = T.batchnorm_backward(dy, self._cache)
        self.gamma.accumulate(dg)
        self.beta.accumulate(db)
        return dx

    def parameters(self):
        yield "gamma", self.gamma
        yield "beta", self.beta


class Sequential(Module):
    def __init__(self, *layers: Module):
        self.layers: List[Module] = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def parameters(self):
        for i, layer in enumerate(self.layers):
            for name, p in layer.parameters():
                yield f"{i}.{name}", p

    def train(self, mode: bool = True):
        self.training = mode
        for layer in self.layers:
            layer.train(mode)
        return self

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.zero_grad()
