"""Bilinear-quad FEM for steady heat conduction on the unit square.

Left/right edges carry Dirichlet temperatures, top/bottom are insulated and
there is no heat source. Conductivity is interpolated from the nodes to the
Gauss points with the element shape functions.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgument, NumericalFailure
from .fields import ScalarField

log = logging.getLogger(__name__)

_G = 1.0 / np.sqrt(3.0)
# local nodes counter-clockwise from the lower-left corner
_XI = np.array([-1.0, 1.0, 1.0, -1.0])
_ETA = np.array([-1.0, -1.0, 1.0, 1.0])
GAUSS = np.array([[-_G, -_G], [_G, -_G], [_G, _G], [-_G, _G]])


@dataclass(frozen=True)
class BoundaryCondition:
    left_T: float = 1.0
    right_T: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.left_T) and np.isfinite(self.right_T)):
            raise InvalidArgument("boundary temperatures must be finite")


@lru_cache(maxsize=None)
def _reference_operators():
    """Shape values ``N[g, a]`` and parent-space gradients ``dN[g, :, a]`` at the 4 Gauss points."""
    N = np.empty((4, 4))
    dN = np.empty((4, 2, 4))
    for g, (xi, eta) in enumerate(GAUSS):
        N[g] = 0.25 * (1 + xi * _XI) * (1 + eta * _ETA)
        dN[g, 0] = 0.25 * _XI * (1 + eta * _ETA)
        dN[g, 1] = 0.25 * _ETA * (1 + xi * _XI)
    return N, dN


def gauss_operators(h: float):
    """``(N, B, detJ)`` for a square element of side h; ``B[g]`` maps nodal T to grad T."""
    N, dN = _reference_operators()
    return N, dN * (2.0 / h), h * h / 4.0


def element_stiffness(k_nodal, h: float) -> np.ndarray:
    k = np.asarray(k_nodal, dtype=float)
    if k.shape != (4,):
        raise InvalidArgument("element_stiffness expects 4 nodal conductivities")
    if not np.all(k > 0) or not h > 0:
        raise InvalidArgument("conductivities and element size must be positive")
    N, B, detJ = gauss_operators(h)
    ke = np.zeros((4, 4))
    for g in range(4):
        ke += (N[g] @ k) * (B[g].T @ B[g]) * detJ
    return ke


class Mesh:
    """Connectivity of the (n-1)^2 element grid, cached per n."""

    def __init__(self, n: int):
        if n < 2:
            raise InvalidArgument("mesh needs n >= 2")
        self.n = n
        self.h = 1.0 / (n - 1)
        i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="ij")
        ll = (i * n + j).ravel()
        self.conn = np.stack([ll, ll + 1, ll + n + 1, ll + n], axis=1)
        self.N, self.B, self.detJ = gauss_operators(self.h)
        # constant geometric part of every element matrix, one per Gauss point
        self.G = np.einsum("gia,gib->gab", self.B, self.B) * self.detJ
        cols = np.arange(n * n) % n
        self.dirichlet_mask = (cols == 0) | (cols == n - 1)
        self.free = np.flatnonzero(~self.dirichlet_mask)
        # sums per-element nodal contributions into global node order
        self.scatter = sp.csr_matrix(
            (np.ones(self.conn.size), (self.conn.ravel(), np.arange(self.conn.size))),
            shape=(n * n, self.conn.size))
        self.fixed = np.flatnonzero(self.dirichlet_mask)

    def gauss_k(self, k: np.ndarray) -> np.ndarray:
        """Conductivity at the Gauss points, shape ``(..., n_el, 4)``."""
        flat = k.reshape(k.shape[:-2] + (-1,))
        return flat[..., self.conn] @ self.N.T

    def dirichlet_vector(self, bc: BoundaryCondition) -> np.ndarray:
        cols = np.arange(self.n * self.n) % self.n
        t = np.zeros(self.n * self.n)
        t[cols == 0] = bc.left_T
        t[cols == self.n - 1] = bc.right_T
        return t


@lru_cache(maxsize=16)
def get_mesh(n: int) -> Mesh:
    return Mesh(n)


@dataclass
class FemSystem:
    n: int
    K: sp.csr_matrix
    dirichlet_mask: np.ndarray
    dirichlet_values: np.ndarray
    K_ff: sp.csr_matrix
    rhs: np.ndarray

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(~self.dirichlet_mask)


def assemble(kfield: ScalarField, bc: BoundaryCondition = BoundaryCondition()) -> FemSystem:
    kfield.require_positive()
    mesh = get_mesh(kfield.n)
    kg = mesh.gauss_k(kfield.values)
    ke = np.einsum("eg,gab->eab", kg, mesh.G)
    rows = np.repeat(mesh.conn, 4, axis=1).ravel()
    cols = np.tile(mesh.conn, (1, 4)).ravel()
    nn = kfield.n ** 2
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(nn, nn)).tocsr()
    t_d = mesh.dirichlet_vector(bc)
    free = mesh.free
    K_ff = K[free][:, free].tocsc()
    rhs = -(K[free] @ t_d)
    return FemSystem(kfield.n, K, mesh.dirichlet_mask.copy(), t_d[mesh.fixed], K_ff, rhs)


def _pcg(A, b, rtol, maxiter):
    """Jacobi-preconditioned conjugate gradients; returns (x, iterations, rel_residual)."""
    d_inv = 1.0 / A.diagonal()
    x = np.zeros_like(b)
    r = b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0, 0.0
    z = d_inv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rel = np.linalg.norm(r) / bnorm
        if rel <= rtol:
            return x, it, rel
        z = d_inv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, maxiter, rel


def solve_system(system: FemSystem, method: str = "direct", rtol: float = 1e-10,
                 maxiter: int | None = None) -> np.ndarray:
    n = system.n
    A, b = system.K_ff, system.rhs
    info: dict = {"method": method, "n": n}
    if b.size == 0:
        t_f = b
    elif method == "direct":
        t_f = spla.splu(A).solve(b)
    elif method == "cg":
        maxiter = maxiter or 20 * n
        t_f, its, _ = _pcg(A.tocsr(), b, rtol, maxiter)
        info["iterations"] = its
    else:
        raise InvalidArgument(f"unknown linear solver {method!r}")
    bnorm = np.linalg.norm(b)
    rel = np.linalg.norm(A @ t_f - b) / bnorm if bnorm > 0 else float(np.linalg.norm(A @ t_f))
    info["relative_residual"] = rel
    if not np.isfinite(rel) or rel > rtol:
        raise NumericalFailure(f"linear solve did not reach rtol={rtol:g} (got {rel:.3e})", info)
    T = np.empty(n * n)
    T[system.free] = t_f
    T[system.dirichlet_mask] = system.dirichlet_values
    return T.reshape(n, n)


def solve_steady_heat(kfield: ScalarField, bc: BoundaryCondition = BoundaryCondition(),
                      method: str = "direct", rtol: float = 1e-10) -> ScalarField:
    return ScalarField(solve_system(assemble(kfield, bc), method=method, rtol=rtol))


def timed_solve(kfield: ScalarField, bc: BoundaryCondition = BoundaryCondition(),
                method: str = "direct") -> tuple[ScalarField, float]:
    t0 = time.perf_counter()
    T = solve_steady_heat(kfield, bc, method)
    return T, time.perf_counter() - t0


# -- energy -----------------------------------------------------------------

def energy_density_terms(mesh: Mesh, T: np.ndarray, k: np.ndarray):
    """Gauss-point gradients and conductivities for batched ``(..., n, n)`` inputs."""
    flat = T.reshape(T.shape[:-2] + (-1,))
    te = flat[..., mesh.conn]                              # (..., el, 4)
    grad = np.einsum("gia,...ea->...egi", mesh.B, te)      # (..., el, g, 2)
    return grad, mesh.gauss_k(k)


def energy_batch(T: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Half of ``T^T K(k) T`` per sample for arrays of shape ``(..., n, n)``."""
    if T.shape != k.shape:
        raise InvalidArgument(f"temperature {T.shape} and conductivity {k.shape} differ in shape")
    mesh = get_mesh(T.shape[-1])
    grad, kg = energy_density_terms(mesh, T, k)
    # lambda_e = w_n/2 * detJ with unit Gauss weights
    return 0.5 * mesh.detJ * np.einsum("...eg,...egi,...egi->...", kg, grad, grad)


def energy_gradient_batch(T: np.ndarray, k: np.ndarray) -> np.ndarray:
    """d(energy)/dT = K(k) T, returned with the input's ``(..., n, n)`` shape."""
    if T.shape != k.shape:
        raise InvalidArgument(f"temperature {T.shape} and conductivity {k.shape} differ in shape")
    n = T.shape[-1]
    mesh = get_mesh(n)
    grad, kg = energy_density_terms(mesh, T, k)
    local = mesh.detJ * np.einsum("...eg,...egi,gia->...ea", kg, grad, mesh.B)
    flat_local = local.reshape(-1, mesh.conn.size)
    return np.asarray(mesh.scatter @ flat_local.T).T.reshape(T.shape)


def discrete_energy(Tfield: ScalarField, kfield: ScalarField) -> float:
    if Tfield.n != kfield.n:
        raise InvalidArgument(f"resolution mismatch: T has n={Tfield.n}, k has n={kfield.n}")
    return float(energy_batch(Tfield.values, kfield.values))


# -- flux -------------------------------------------------------------------

@dataclass(frozen=True)
class VectorField:
    qx: np.ndarray
    qy: np.ndarray

    @property
    def n(self) -> int:
        return self.qx.shape[0]

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.qx, self.qy)


def compute_flux(Tfield: ScalarField, kfield: ScalarField) -> VectorField:
    """Nodal heat flux ``q = -k grad T`` from second-order finite differences."""
    if Tfield.n != kfield.n:
        raise InvalidArgument(f"resolution mismatch: T has n={Tfield.n}, k has n={kfield.n}")
    h = Tfield.h
    edge = 2 if Tfield.n >= 3 else 1
    dTdy, dTdx = np.gradient(Tfield.values, h, edge_order=edge)
    return VectorField(-kfield.values * dTdx, -kfield.values * dTdy)
