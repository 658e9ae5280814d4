"""Stateful layers over a shared :class:`ParamStore`.

A layer caches what its backward pass needs during ``forward``; gradients
are accumulated into the store under the layer's parameter names.
"""
from __future__ import annotations

import numpy as np

from ..errors import StateError
from . import functional as F
from .params import ParamStore, he_normal


class Layer:
    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 1):
        self.store, self.name = store, name
        self.c_in, self.c_out, self.stride, self.padding = c_in, c_out, stride, padding
        self.w = f"{name}.weight"
        self.b = f"{name}.bias"
        store.add(self.w, he_normal(rng, (c_out, c_in, 3, 3), c_in * 9))
        store.add(self.b, np.zeros(c_out))
        self._cache = None

    def forward(self, x, training=False):
        out, cache = F.conv2d_forward(x, self.store[self.w], self.store[self.b],
                                      self.stride, self.padding)
        self._cache = cache if training else None
        return out

    def backward(self, dout):
        if self._cache is None:
            raise StateError(f"{self.name}: backward before a training forward pass")
        dx, dw, db = F.conv2d_backward(dout, self._cache)
        self.store.accumulate(self.w, dw)
        self.store.accumulate(self.b, db)
        self._cache = None
        return dx


class Dense(Layer):
    def __init__(self, store: ParamStore, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator):
        self.store, self.name = store, name
        self.w = f"{name}.weight"
        self.b = f"{name}.bias"
        store.add(self.w, he_normal(rng, (n_out, n_in), n_in))
        store.add(self.b, np.zeros(n_out))
        self._cache = None

    def forward(self, x, training=False):
        out, cache = F.dense_forward(x, self.store[self.w], self.store[self.b])
        self._cache = cache if training else None
        return out

    def backward(self, dout):
        if self._cache is None:
            raise StateError(f"{self.name}: backward before a training forward pass")
        dx, dw, db = F.dense_backward(dout, self._cache)
        self.store.accumulate(self.w, dw)
        self.store.accumulate(self.b, db)
        self._cache = None
        return dx


class BatchNorm2d(Layer):
    def __init__(self, store: ParamStore, name: str, channels: int):
        self.store, self.name = store, name
        self.g, self.b = f"{name}.weight", f"{name}.bias"
        store.add(self.g, np.ones(channels))
        store.add(self.b, np.zeros(channels))
        self.rm = store.add_buffer(f"{name}.running_mean", np.zeros(channels))
        self.rv = store.add_buffer(f"{name}.running_var", np.ones(channels))
        self.tracked = store.add_buffer(f"{name}.num_batches_tracked", np.zeros(1))
        self._cache = None

    def forward(self, x, training=False):
        out, cache = F.batchnorm_forward(x, self.store[self.g], self.store[self.b],
                                         self.rm, self.rv, training, int(self.tracked[0]))
        if training:
            self.tracked += 1
        self._cache = cache
        return out

    def backward(self, dout):
        dx, dg, db = F.batchnorm_backward(dout, self._cache)
        self.store.accumulate(self.g, dg)
        self.store.accumulate(self.b, db)
        self._cache = None
        return dx


class ReLU(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x, training=False):
        out, mask = F.relu_forward(x)
        self._cache = mask if training else None
        return out

    def backward(self, dout):
        if self._cache is None:
            raise StateError("relu: backward before a training forward pass")
        dx = F.relu_backward(dout, self._cache)
        self._cache = None
        return dx


class Swish(Layer):
    def __init__(self):
        self._cache = None

    def forward(self, x, training=False):
        out, cache = F.swish_forward(x)
        self._cache = cache if training else None
        return out

    def backward(self, dout):
        if self._cache is None:
            raise StateError("swish: backward before a training forward pass")
        dx = F.swish_backward(dout, self._cache)
        self._cache = None
        return dx


class UpsampleTo(Layer):
    def __init__(self, size: int):
        self.size = size
        self._cache = None

    def forward(self, x, training=False):
        out, cache = F.upsample_forward(x, self.size)
        self._cache = cache
        return out

    def backward(self, dout):
        if self._cache is None:
            raise StateError("upsample: backward before forward")
        return F.upsample_backward(dout, self._cache)


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


def conv_bn_relu(store, name, c_in, c_out, rng, stride=1, padding=1) -> Sequential:
    return Sequential([Conv2d(store, f"{name}.conv", c_in, c_out, rng, stride, padding),
                       BatchNorm2d(store, f"{name}.bn", c_out), ReLU()])
