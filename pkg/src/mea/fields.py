"""Nodal fields on the unit square, max-pool condensation and resampling.

Layout convention for every array in the package: ``values[i, j]`` is the
node at ``y = i*h`` (row 0 at the bottom) and ``x = j*h`` (column 0 on the
left), with ``h = 1/(n-1)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument

RESOLUTIONS = (101, 51, 26, 13, 11)
WINDOWS = {51: 2, 26: 4, 13: 8, 11: 10}

MEAF_MAGIC = b"MEAF"
MEAF_VERSION = 1


@dataclass(frozen=True, eq=False)
class ScalarField:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InvalidArgument(f"field must be square n x n, got shape {v.shape}")
        if v.shape[0] < 2:
            raise InvalidArgument("field needs n >= 2")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("field contains non-finite values")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / (self.n - 1)

    def require_positive(self, what: str = "conductivity") -> "ScalarField":
        if not np.all(self.values > 0):
            raise InvalidArgument(f"{what} field must be strictly positive")
        return self

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())

    @classmethod
    def constant(cls, n: int, value: float) -> "ScalarField":
        return cls(np.full((n, n), float(value)))

    @classmethod
    def from_function(cls, n: int, fn) -> "ScalarField":
        """Sample ``fn(x, y)`` (vectorised) on the n x n nodal grid."""
        y, x = node_coordinates(n)
        return cls(np.broadcast_to(fn(x, y), (n, n)))


def node_coordinates(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(Y, X)`` coordinate arrays of the nodal grid."""
    s = np.linspace(0.0, 1.0, n)
    return np.meshgrid(s, s, indexing="ij")


@dataclass
class MultiResStack:
    levels: dict[int, ScalarField]
    source_id: str = ""
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        missing = set(RESOLUTIONS) - set(self.levels)
        if missing:
            raise InvalidArgument(f"stack missing levels {sorted(missing)}")
        for n, f in self.levels.items():
            if f.n != n:
                raise InvalidArgument(f"level {n} holds a field of side {f.n}")

    def __getitem__(self, n: int) -> ScalarField:
        return self.levels[n]


def condense_max(field: ScalarField, window: int) -> ScalarField:
    """Block max-pooling with stride equal to the window.

    Trailing partial blocks are kept, so the output side is ``ceil(n / window)``.
    """
    n = field.n
    if not isinstance(window, (int, np.integer)) or window < 1 or window > n:
        raise InvalidArgument(f"window must be an integer in [1, {n}], got {window!r}")
    m = -(-n // window)
    padded = np.full((m * window, m * window), -np.inf)
    padded[:n, :n] = field.values
    out = padded.reshape(m, window, m, window).max(axis=(1, 3))
    return ScalarField(out)


def build_stack(field101: ScalarField, source_id: str = "") -> MultiResStack:
    if field101.n != 101:
        raise InvalidArgument(f"build_stack expects a 101 x 101 field, got n={field101.n}")
    levels = {101: field101}
    for n, w in WINDOWS.items():
        levels[n] = condense_max(field101, w)
    return MultiResStack(levels, source_id=source_id)


def _keys_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    out = np.zeros_like(t)
    near = t <= 1
    far = (t > 1) & (t < 2)
    out[near] = (a + 2) * t[near] ** 3 - (a + 3) * t[near] ** 2 + 1
    out[far] = a * t[far] ** 3 - 5 * a * t[far] ** 2 + 8 * a * t[far] - 4 * a
    return out


@lru_cache(maxsize=64)
def _interp_matrix_cached(n_in: int, n_out: int, order: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    c = rows * (n_in - 1) / (n_out - 1)
    if order == 0:
        idx = np.clip(np.floor(c + 0.5).astype(int), 0, n_in - 1)
        m[rows, idx] = 1.0
    elif order == 1:
        i0 = np.clip(np.floor(c).astype(int), 0, n_in - 2)
        t = c - i0
        m[rows, i0] += 1.0 - t
        m[rows, i0 + 1] += t
    else:
        i0 = np.clip(np.floor(c).astype(int), 0, n_in - 2)
        t = c - i0
        for off in (-1, 0, 1, 2):
            idx = np.clip(i0 + off, 0, n_in - 1)
            np.add.at(m, (rows, idx), _keys_kernel(t - off))
    m.flags.writeable = False
    return m


def interp_matrix(n_in: int, n_out: int, order: int = 1) -> np.ndarray:
    """Dense 1-D resampling operator ``R`` with ``out = R @ in`` (endpoint aligned).

    Order 0 is nearest neighbour, 1 linear, 3 Keys cubic convolution (a=-0.5)
    with indices clamped at the border. The 2-D resample is ``R f R^T``.
    """
    if order not in (0, 1, 3):
        raise InvalidArgument(f"unsupported interpolation order {order!r}; use 0, 1 or 3")
    if n_in < 2 or n_out < 2:
        raise InvalidArgument("interpolation needs at least 2 nodes on each side")
    return _interp_matrix_cached(int(n_in), int(n_out), int(order))


def resample(field: ScalarField, target_n: int, order: int = 3) -> ScalarField:
    if target_n < 2:
        raise InvalidArgument("target_n must be >= 2")
    r = interp_matrix(field.n, target_n, order)
    return ScalarField(r @ field.values @ r.T)


# -- MEAF binary format -----------------------------------------------------

def write_field(dest, field: ScalarField) -> None:
    data = struct.pack("<4sII", MEAF_MAGIC, MEAF_VERSION, field.n)
    data += field.values.astype("<f4").tobytes()
    if isinstance(dest, (str, Path)):
        Path(dest).write_bytes(data)
    else:
        dest.write(data)


def read_field(src) -> ScalarField:
    if isinstance(src, (str, Path)):
        raw = Path(src).read_bytes()
    else:
        raw = src.read()
    return _parse_field(raw)


def _parse_field(raw: bytes) -> ScalarField:
    if len(raw) < 12:
        raise FormatError("truncated MEAF header")
    magic, version, n = struct.unpack_from("<4sII", raw)
    if magic != MEAF_MAGIC:
        raise FormatError(f"bad MEAF magic {magic!r}")
    if version != MEAF_VERSION:
        raise FormatError(f"unsupported MEAF version {version}")
    expected = 12 + 4 * n * n
    if len(raw) != expected:
        raise FormatError(f"MEAF payload is {len(raw)} bytes, expected {expected}")
    vals = np.frombuffer(raw, dtype="<f4", offset=12).reshape(n, n)
    return ScalarField(vals.astype(np.float64))
