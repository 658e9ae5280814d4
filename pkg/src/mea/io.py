"""MEAD dataset container and its JSON sidecar manifest.

Layout (little-endian): ``b"MEAD"``, u32 version, u32 sample count, u32 side
``n``; then per sample ``n*n`` float32 conductivities, a flag byte and, when
the flag is 1, ``n*n`` float32 FEM temperatures.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument

MAGIC = b"MEAD"
VERSION = 1
_HEADER = struct.Struct("<4sIII")
_F32 = np.dtype("<f4")


@dataclass
class Dataset:
    """``k`` is ``(N, n, n)``; ``T`` is ``(N, n, n)`` with NaN rows for unlabelled samples."""

    k: np.ndarray
    T: np.ndarray | None = None
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.float64)
        if self.k.ndim != 3 or self.k.shape[1] != self.k.shape[2]:
            raise InvalidArgument(f"dataset conductivities must be (N, n, n), got {self.k.shape}")
        if self.T is not None:
            self.T = np.asarray(self.T, dtype=np.float64)
            if self.T.shape != self.k.shape:
                raise InvalidArgument(f"temperature block {self.T.shape} != conductivities {self.k.shape}")

    def __len__(self):
        return self.k.shape[0]

    @property
    def n(self) -> int:
        return self.k.shape[1]

    def labelled(self) -> np.ndarray:
        if self.T is None:
            return np.zeros(len(self), dtype=bool)
        return np.all(np.isfinite(self.T.reshape(len(self), -1)), axis=1)

    @property
    def fully_labelled(self) -> bool:
        return bool(len(self)) and bool(self.labelled().all())

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.k[idx], None if self.T is None else self.T[idx], dict(self.manifest))

    def digest(self) -> str:
        return hashlib.sha256(to_bytes(self)).hexdigest()


def to_bytes(ds: Dataset) -> bytes:
    n = ds.n
    labelled = ds.labelled()
    parts = [_HEADER.pack(MAGIC, VERSION, len(ds), n)]
    for i in range(len(ds)):
        parts.append(ds.k[i].astype(_F32).tobytes())
        if labelled[i]:
            parts.append(b"\x01")
            parts.append(ds.T[i].astype(_F32).tobytes())
        else:
            parts.append(b"\x00")
    return b"".join(parts)


def from_bytes(data: bytes) -> Dataset:
    if len(data) < _HEADER.size:
        raise FormatError("truncated MEAD header")
    magic, version, count, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported MEAD version {version}")
    if n < 2:
        raise FormatError(f"invalid grid side {n}")
    block = n * n * 4
    k = np.empty((count, n, n))
    T = np.full((count, n, n), np.nan)
    pos = _HEADER.size
    any_T = False
    for i in range(count):
        if pos + block + 1 > len(data):
            raise FormatError(f"truncated MEAD payload at sample {i}")
        k[i] = np.frombuffer(data, _F32, n * n, pos).reshape(n, n)
        flag = data[pos + block]
        pos += block + 1
        if flag == 1:
            if pos + block > len(data):
                raise FormatError(f"truncated temperature block at sample {i}")
            T[i] = np.frombuffer(data, _F32, n * n, pos).reshape(n, n)
            pos += block
            any_T = True
        elif flag != 0:
            raise FormatError(f"invalid temperature flag {flag} at sample {i}")
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after MEAD payload")
    if not np.all(np.isfinite(k)):
        raise FormatError("non-finite conductivity in MEAD payload")
    return Dataset(k, T if any_T else None)


def manifest_path(path) -> Path:
    return Path(str(path) + ".json")


def write_dataset(path, ds: Dataset) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ds))
    os.replace(tmp, path)
    meta = dict(ds.manifest)
    meta.update(samples=len(ds), n=ds.n, labelled=int(ds.labelled().sum()))
    manifest_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_dataset(path) -> Dataset:
    path = Path(path)
    ds = from_bytes(path.read_bytes())
    mp = manifest_path(path)
    if mp.exists():
        try:
            ds.manifest = json.loads(mp.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"unreadable manifest {mp}: {exc}") from exc
    return ds
