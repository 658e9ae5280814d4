"""Base class tying a layer graph to its parameter store and checkpoints."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from ..errors import InvalidArgument, NumericalFailure
from .checkpoint import Checkpoint
from .params import ParamStore, count_params

_REGISTRY: dict[str, type["Network"]] = {}


class Network:
    """Subclasses set ``kind``, implement ``build(rng)``, ``forward`` and ``backward``."""

    kind = ""

    def __init_subclass__(cls, **kw):
        super().__init_subclass__(**kw)
        if cls.kind:
            _REGISTRY[cls.kind] = cls

    def __init__(self, config: dict, dtype=np.float32):
        self.config = dict(config)
        self.store = ParamStore(dtype)
        self.meta: dict = {}
        self.build(np.random.default_rng(self.config.get("seed", 0)))

    def build(self, rng: np.random.Generator):
        raise NotImplementedError

    @property
    def dtype(self):
        return self.store.dtype

    def num_params(self) -> int:
        return count_params(self.store)

    def _guard(self, out: np.ndarray) -> np.ndarray:
        if not np.all(np.isfinite(out)):
            raise NumericalFailure(f"{self.kind}: non-finite values in forward output")
        return out

    def checkpoint(self, **meta) -> Checkpoint:
        tensors = OrderedDict((k, v) for k, v in self.store.state().items())
        return Checkpoint(self.kind, tensors, {"config": self.config, **self.meta, **meta})

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, dtype=np.float32) -> "Network":
        target = _REGISTRY.get(ckpt.kind)
        if target is None:
            raise InvalidArgument(f"unknown model kind {ckpt.kind!r}")
        if cls is not Network and not issubclass(target, cls):
            raise InvalidArgument(f"checkpoint holds a {ckpt.kind!r} model, expected {cls.kind!r}")
        net = target(ckpt.meta.get("config", {}), dtype=dtype)
        net.store.load_state(ckpt.tensors)
        net.meta = {k: v for k, v in ckpt.meta.items() if k != "config"}
        return net

    def clone(self, dtype=None) -> "Network":
        net = type(self)(self.config, dtype=dtype or self.dtype)
        net.store.load_state(self.store.state())
        return net
