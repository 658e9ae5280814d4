"""MEAC checkpoint container.

Layout (little-endian): ``MEAC``, u32 version, u32 length + UTF-8 model-kind
tag, u32 tensor count, then per tensor u32 name length + UTF-8 name, u32 rank,
rank x u32 dims and float32 data; finally u32 length + UTF-8 JSON metadata.
"""
from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"MEAC"
VERSION = 1


@dataclass
class Checkpoint:
    kind: str
    tensors: "OrderedDict[str, np.ndarray]"
    meta: dict = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        out = bytearray(struct.pack("<4sI", MAGIC, VERSION))
        out += _pack_str(self.kind)
        out += struct.pack("<I", len(self.tensors))
        for name, arr in self.tensors.items():
            a = np.ascontiguousarray(arr, dtype="<f4")
            out += _pack_str(name)
            out += struct.pack("<I", a.ndim)
            out += struct.pack(f"<{a.ndim}I", *a.shape)
            out += a.tobytes()
        out += _pack_str(json.dumps(self.meta, sort_keys=True))
        return bytes(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        try:
            magic, version = struct.unpack_from("<4sI", raw, 0)
            if magic != MAGIC:
                raise FormatError(f"bad MEAC magic {magic!r}")
            if version != VERSION:
                raise FormatError(f"unsupported MEAC version {version}")
            pos = 8
            kind, pos = _unpack_str(raw, pos)
            (count,), pos = struct.unpack_from("<I", raw, pos), pos + 4
            tensors = OrderedDict()
            for _ in range(count):
                name, pos = _unpack_str(raw, pos)
                (rank,), pos = struct.unpack_from("<I", raw, pos), pos + 4
                dims = struct.unpack_from(f"<{rank}I", raw, pos)
                pos += 4 * rank
                size = int(np.prod(dims)) if rank else 1
                data = np.frombuffer(raw, dtype="<f4", count=size, offset=pos)
                pos += 4 * size
                tensors[name] = data.reshape(dims).astype(np.float32)
            meta_s, pos = _unpack_str(raw, pos)
            meta = json.loads(meta_s)
        except FormatError:
            raise
        except (struct.error, ValueError, UnicodeDecodeError) as exc:
            raise FormatError(f"malformed MEAC payload: {exc}") from None
        if pos != len(raw):
            raise FormatError("trailing bytes after MEAC metadata")
        return cls(kind, tensors, meta)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def _unpack_str(raw: bytes, pos: int):
    (n,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if pos + n > len(raw):
        raise FormatError("truncated string in MEAC payload")
    return raw[pos:pos + n].decode("utf-8"), pos + n
