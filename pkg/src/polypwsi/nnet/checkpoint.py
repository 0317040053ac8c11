"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"TRN1"
    u32 metadata length, metadata as UTF-8 JSON (architecture + extras)
    u32 tensor count
    per tensor: u16 name length, name, u8 ndim, ndim x u32 extents,
                float64 values in row-major order
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from ..errors import CheckpointError
from ..ingest import atomic_write_bytes
from .model import TinyResNet

MAGIC = b"TRN1"


def dumps(model: TinyResNet, metadata: dict | None = None) -> bytes:
    meta = {"arch": model.arch, **(metadata or {})}
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", len(blob)))
    out.write(blob)
    params = model.parameters()
    out.write(struct.pack("<I", len(params)))
    for name, arr in params.items():
        raw = name.encode("utf-8")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(struct.pack("<B", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes, expected: TinyResNet | None = None) -> tuple[TinyResNet, dict]:
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
        model = expected if expected is not None else TinyResNet.from_arch(meta["arch"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"bad checkpoint metadata: {exc}") from None
    params = model.parameters()
    (count,) = r.unpack("<I")
    if count != len(params):
        raise CheckpointError(f"checkpoint holds {count} tensors, model has {len(params)}")
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        if name not in params:
            raise CheckpointError(f"unexpected tensor {name!r}")
        if tuple(shape) != params[name].shape:
            raise CheckpointError(f"{name}: checkpoint shape {tuple(shape)} != model shape {params[name].shape}")
        size = int(np.prod(shape)) * 8
        params[name][...] = np.frombuffer(r.take(size), dtype="<f8").reshape(shape)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after last tensor")
    return model, meta


def save(path, model: TinyResNet, metadata: dict | None = None) -> None:
    atomic_write_bytes(path, dumps(model, metadata))


def load(path, expected: TinyResNet | None = None) -> tuple[TinyResNet, dict]:
    with open(path, "rb") as fh:
        return loads(fh.read(), expected)
