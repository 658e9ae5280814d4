"""Named parameter storage and the Adam update."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..errors import InvalidArgument


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray | None = None
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros_like(self.value)
        if self.v is None:
            self.v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape


class ParamStore:
    """Ordered trainable parameters plus non-trainable buffers (batchnorm statistics)."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: OrderedDict[str, Param] = OrderedDict()
        self.buffers: OrderedDict[str, np.ndarray] = OrderedDict()
        self.t = 0

    def add(self, name: str, value: np.ndarray) -> Param:
        if name in self.params or name in self.buffers:
            raise InvalidArgument(f"duplicate parameter name {name!r}")
        p = Param(np.ascontiguousarray(value, dtype=self.dtype))
        self.params[name] = p
        return p

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params or name in self.buffers:
            raise InvalidArgument(f"duplicate buffer name {name!r}")
        arr = np.array(value, dtype=self.dtype)
        self.buffers[name] = arr
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name].value

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def accumulate(self, name: str, grad: np.ndarray):
        p = self.params[name]
        if p.grad is None:
            p.grad = np.array(grad, dtype=self.dtype)
        else:
            p.grad += grad

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (p.grad if p.grad is not None else np.zeros_like(p.value))
                for k, p in self.params.items()}

    def state(self) -> dict[str, np.ndarray]:
        """Copy of every parameter and buffer value, keyed by name."""
        out = {k: p.value.copy() for k, p in self.params.items()}
        out.update({k: b.copy() for k, b in self.buffers.items()})
        return out

    def load_state(self, state: dict[str, np.ndarray], strict: bool = True):
        for k, p in self.params.items():
            if k not in state:
                if strict:
                    raise InvalidArgument(f"missing parameter {k!r} in state")
                continue
            v = np.asarray(state[k])
            if v.shape != p.value.shape:
                raise InvalidArgument(f"parameter {k!r}: shape {v.shape} != {p.value.shape}")
            p.value[...] = v
        for k, b in self.buffers.items():
            if k in state:
                b[...] = np.asarray(state[k])
            elif strict:
                raise InvalidArgument(f"missing buffer {k!r} in state")

    def astype(self, dtype) -> "ParamStore":
        """Copy of the store (values and buffers only) in another float precision."""
        other = ParamStore(dtype)
        for k, p in self.params.items():
            other.add(k, p.value)
        for k, b in self.buffers.items():
            other.add_buffer(k, b)
        other.t = self.t
        return other


def count_params(store: ParamStore) -> int:
    """Trainable element count; batchnorm running statistics are buffers and excluded."""
    return int(sum(p.value.size for p in store.params.values()))


def adam_step(store: ParamStore, grads: dict[str, np.ndarray] | None = None, lr: float = 1e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam. ``grads`` defaults to the gradients accumulated in the store."""
    if grads is None:
        grads = store.grads()
    missing = [k for k in store.params if k not in grads]
    if missing:
        raise InvalidArgument(f"missing gradients for {missing[:3]}{'...' if len(missing) > 3 else ''}")
    store.t += 1
    t = store.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, p in store.params.items():
        g = np.asarray(grads[k], dtype=store.dtype)
        if g.shape != p.value.shape:
            raise InvalidArgument(f"gradient for {k!r} has shape {g.shape}, expected {p.value.shape}")
        p.m *= beta1
        p.m += (1 - beta1) * g
        p.v *= beta2
        p.v += (1 - beta2) * g * g
        p.value -= (lr * (p.m / c1) / (np.sqrt(p.v / c2) + eps)).astype(store.dtype)


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
