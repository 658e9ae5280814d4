"""Label-free operator network for the coarse (11 x 11) heat problem.

The network sees the nodal conductivities and emits temperatures for the
free nodes only; the Dirichlet columns are inserted afterwards, so the
boundary values hold exactly. Training minimises the discrete energy of the
assembled field, which needs no reference solutions.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import InvalidArgument, NumericalFailure, TrainingFailure
from .fem import BoundaryCondition, energy_batch, energy_gradient_batch, get_mesh, solve_steady_heat
from .fields import ScalarField
from .nn.layers import Dense, Sequential, Swish
from .nn.network import Network
from .nn.params import adam_step

log = logging.getLogger(__name__)

N_COARSE = 11


def free_count(n: int = N_COARSE) -> int:
    return n * n - 2 * n


def assemble_batch(free_values: np.ndarray, bc: BoundaryCondition = BoundaryCondition(),
                   n: int = N_COARSE) -> np.ndarray:
    """``(B, n*n - 2n)`` free-node values -> ``(B, n, n)`` fields with Dirichlet columns set."""
    free_values = np.asarray(free_values)
    if free_values.ndim != 2 or free_values.shape[1] != free_count(n):
        raise InvalidArgument(f"expected (batch, {free_count(n)}) free values, got {free_values.shape}")
    out = np.empty((free_values.shape[0], n, n), dtype=np.float64)
    out[:, :, 0] = bc.left_T
    out[:, :, -1] = bc.right_T
    out[:, :, 1:-1] = free_values.reshape(-1, n, n - 2)
    return out


def assemble_full_field(free_values, bc: BoundaryCondition = BoundaryCondition(),
                        n: int = N_COARSE) -> ScalarField:
    v = np.asarray(free_values, dtype=np.float64).ravel()
    if v.size != free_count(n):
        raise InvalidArgument(f"expected {free_count(n)} free values, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise InvalidArgument("free values must be finite")
    return ScalarField(assemble_batch(v[None], bc, n)[0])


def extract_free(field) -> np.ndarray:
    """Inverse of :func:`assemble_full_field` on the interior columns (row-major)."""
    v = field.values if isinstance(field, ScalarField) else np.asarray(field)
    return v[..., :, 1:-1].reshape(v.shape[:-2] + (-1,))


def _as_batch(fields, n=None) -> np.ndarray:
    if isinstance(fields, ScalarField):
        arr = fields.values[None]
    elif isinstance(fields, np.ndarray):
        arr = fields if fields.ndim == 3 else fields[None]
    else:
        arr = np.stack([f.values if isinstance(f, ScalarField) else np.asarray(f) for f in fields])
    if n is not None and arr.shape[-1] != n:
        raise InvalidArgument(f"expected {n} x {n} fields, got {arr.shape[-2:]}")
    return arr


def fol_loss(k11_batch, predicted_T_batch) -> float:
    """Mean discrete energy of the predicted fields under their conductivities."""
    k = _as_batch(k11_batch)
    T = _as_batch(predicted_T_batch)
    if k.shape != T.shape:
        raise InvalidArgument(f"resolution mismatch between k {k.shape} and T {T.shape}")
    return float(np.mean(energy_batch(T, k)))


def fol_loss_grad(k: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Gradient of the mean energy with respect to the free-node outputs."""
    return extract_free(energy_gradient_batch(T, k)) / k.shape[0]


class FolModel(Network):
    kind = "fol-v1"

    def build(self, rng):
        n = self.config.setdefault("n", N_COARSE)
        hidden = self.config.setdefault("hidden", [256, 256])
        self.config.setdefault("left_T", 1.0)
        self.config.setdefault("right_T", 0.0)
        sizes = [n * n, *hidden]
        layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            layers += [Dense(self.store, f"fc{i}", a, b, rng), Swish()]
        layers.append(Dense(self.store, f"fc{len(hidden)}", sizes[-1], free_count(n), rng))
        self.net = Sequential(layers)

    @property
    def n(self) -> int:
        return self.config["n"]

    @property
    def bc(self) -> BoundaryCondition:
        return BoundaryCondition(self.config["left_T"], self.config["right_T"])

    def forward(self, k: np.ndarray, training=False) -> np.ndarray:
        """``(B, n, n)`` conductivities -> ``(B, n*n - 2n)`` free temperatures."""
        x = np.asarray(k, dtype=self.dtype).reshape(k.shape[0], -1)
        return self._guard(self.net.forward(x, training))

    def backward(self, dfree):
        return self.net.backward(np.asarray(dfree, dtype=self.dtype))

    def predict_batch(self, k: np.ndarray) -> np.ndarray:
        k = _as_batch(k, self.n)
        return assemble_batch(self.forward(k).astype(np.float64), self.bc, self.n)


def predict_coarse(model: FolModel, k11: ScalarField) -> ScalarField:
    if k11.n != model.n:
        raise InvalidArgument(f"model was trained on n={model.n}, got a field with n={k11.n}")
    k11.require_positive()
    return ScalarField(model.predict_batch(k11.values[None])[0])


@dataclass
class FolHistory:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)


def split_indices(count: int, val_fraction: float, seed: int):
    order = np.random.default_rng([seed, 0xF01D]).permutation(count)
    n_val = int(round(count * val_fraction))
    if count > 1:
        n_val = min(max(n_val, 1), count - 1)
    else:
        n_val = 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def train_fol(k_fields, epochs: int = 400, lr: float = 1e-4, batch: int = 50, seed: int = 0,
              hidden=(256, 256), val_fraction: float = 0.2, dataset_hash: str = "",
              bc: BoundaryCondition = BoundaryCondition()):
    """Fit a :class:`FolModel` by minimising the discrete energy. Returns ``(model, history)``."""
    k = _as_batch(k_fields).astype(np.float64)
    if k.shape[0] == 0:
        raise InvalidArgument("train_fol needs at least one conductivity field")
    if np.any(k <= 0):
        raise InvalidArgument("conductivity fields must be positive")
    n = k.shape[-1]
    model = FolModel({"n": n, "hidden": list(hidden), "seed": seed,
                      "left_T": bc.left_T, "right_T": bc.right_T})
    tr, va = split_indices(k.shape[0], val_fraction, seed)
    if va.size == 0:
        va = tr
    hist = FolHistory()
    last_good = model.checkpoint(epoch=0, lr=lr, seed=seed, dataset_hash=dataset_hash)
    for epoch in range(1, epochs + 1):
        order = np.random.default_rng([seed, epoch]).permutation(tr)
        total = 0.0
        for s in range(0, order.size, batch):
            idx = order[s:s + batch]
            kb = k[idx]
            model.store.zero_grad()
            try:
                free = model.forward(kb, training=True).astype(np.float64)
            except NumericalFailure as exc:
                raise TrainingFailure(f"FOL diverged at epoch {epoch}: {exc}", last_good, epoch) from exc
            T = assemble_batch(free, bc, n)
            loss = float(np.mean(energy_batch(T, kb)))
            if not np.isfinite(loss):
                raise TrainingFailure(f"FOL loss diverged at epoch {epoch}", last_good, epoch)
            model.backward(fol_loss_grad(kb, T))
            adam_step(model.store, lr=lr)
            total += loss * idx.size
        try:
            val = fol_loss(k[va], model.predict_batch(k[va]))
        except NumericalFailure:
            val = np.nan
        if not np.isfinite(val):
            raise TrainingFailure(f"FOL validation loss diverged at epoch {epoch}", last_good, epoch)
        hist.epochs.append(epoch)
        hist.train_loss.append(total / tr.size)
        hist.val_loss.append(val)
        last_good = model.checkpoint(epoch=epoch, lr=lr, seed=seed, dataset_hash=dataset_hash)
        if epoch % 50 == 0 or epoch == epochs:
            log.info("fol epoch %d train %.6f val %.6f", epoch, hist.train_loss[-1], val)
    model.config["epochs"] = epochs
    model.meta = {"epoch": epochs, "lr": lr, "seed": seed, "dataset_hash": dataset_hash}
    return model, hist


# -- coarse solver backends --------------------------------------------------

class CoarseSolver(Protocol):
    name: str

    def solve_batch(self, k11: np.ndarray) -> np.ndarray:
        """``(B, 11, 11)`` conductivities -> ``(B, 11, 11)`` temperatures."""


class FolSolver:
    name = "fol"

    def __init__(self, model: FolModel):
        self.model = model

    def solve_batch(self, k11):
        return self.model.predict_batch(k11)


class FemCoarseSolver:
    name = "fem"

    def __init__(self, bc: BoundaryCondition = BoundaryCondition()):
        self.bc = bc

    def solve_batch(self, k11):
        k11 = _as_batch(k11)
        return np.stack([solve_steady_heat(ScalarField(k), self.bc).values for k in k11])


def stationarity_residual(k11: ScalarField, bc: BoundaryCondition = BoundaryCondition()):
    """Max |dE/dT| over free nodes at the FEM solution, and the mean stiffness diagonal."""
    T = solve_steady_heat(k11, bc)
    g = extract_free(energy_gradient_batch(T.values, k11.values))
    mesh = get_mesh(k11.n)
    kg = mesh.gauss_k(k11.values)
    diag = np.zeros(k11.n ** 2)
    np.add.at(diag, mesh.conn, np.einsum("eg,gaa->ea", kg, mesh.G))
    return float(np.abs(g).max()), float(diag.mean())
