"""Central finite-difference verification of analytic gradients (float64)."""
from __future__ import annotations

import numpy as np

from .layers import Layer
from .params import ParamStore


def numeric_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` with respect to ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|)``.

    Entries whose gradients are both below ``1e-7 * max(1, scale)`` are
    compared against that floor instead, so exact zeros do not divide by zero.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    floor = 1e-7 * max(1.0, float(np.abs(a).max()), float(np.abs(n).max()))
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check_layer(layer: Layer, store: ParamStore | None, x: np.ndarray,
                rng: np.random.Generator, eps: float = 1e-5) -> dict[str, float]:
    """Compare backward against finite differences of ``sum(r * layer(x))``.

    Returns the relative error for the input and for every parameter.
    """
    x = np.array(x, dtype=np.float64)
    r = rng.standard_normal(layer.forward(x, training=True).shape)
    if store is not None:
        store.zero_grad()
    layer.forward(x, training=True)
    dx = layer.backward(r)

    def loss():
        return float(np.sum(r * layer.forward(x, training=True)))

    errors = {"input": relative_error(dx, numeric_grad(loss, x, eps))}
    if store is not None:
        for name, p in store.params.items():
            errors[name] = relative_error(p.grad, numeric_grad(loss, p.value, eps))
    return errors
