"""Binary checkpoint format.

Layout, all integers little-endian::

    b"SEAT"                      magic
    u32   version                currently 1
    u64   step
    u32   n, n bytes             config text (UTF-8)
    u32   tensor count
    per tensor:
        u32 n, n bytes           name (UTF-8)
        u32 rank
        u64 * rank               dims
        u8                       dtype tag (0 float32, 1 float64, 2 int64)
    per tensor, same order:      raw little-endian payload, C order
    u32   record count
    per record:
        u32 n, n bytes           tag (UTF-8)
        u32 n, n bytes           payload

Records hold the RNG state and optimizer step counters as sorted-key JSON.
Writing is a pure function of the contents, so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError

MAGIC = b"SEAT"
VERSION = 1
_TAGS = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}
_DTYPES = {v: k for k, v in _TAGS.items()}


@dataclass
class Checkpoint:
    step: int
    config_text: str
    tensors: "OrderedDict[str, np.ndarray]"
    records: "OrderedDict[str, bytes]" = field(default_factory=OrderedDict)

    def record_json(self, tag: str):
        return json.loads(self.records[tag].decode("utf-8"))


def _blob(b: bytes) -> bytes:
    return struct.pack("<I", len(b)) + b


def encode(ck: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<IQ", VERSION, ck.step), _blob(ck.config_text.encode("utf-8"))]
    parts.append(struct.pack("<I", len(ck.tensors)))
    arrays = []
    for name, arr in ck.tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            raise ContractError(f"tensor {name}: unsupported dtype {arr.dtype}")
        parts.append(_blob(name.encode("utf-8")))
        parts.append(struct.pack(f"<I{arr.ndim}Q", arr.ndim, *arr.shape))
        parts.append(struct.pack("<B", _TAGS[arr.dtype]))
        arrays.append(arr)
    for arr in arrays:
        parts.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
    parts.append(struct.pack("<I", len(ck.records)))
    for tag, payload in ck.records.items():
        parts.append(_blob(tag.encode("utf-8")))
        parts.append(_blob(payload))
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ContractError("checkpoint is truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def blob(self) -> bytes:
        (n,) = self.unpack("<I")
        return self.take(n)


def decode(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise ContractError("not a checkpoint file (bad magic)")
    version, step = r.unpack("<IQ")
    if version != VERSION:
        raise ContractError(f"checkpoint version {version}, this build reads version {VERSION}")
    config_text = r.blob().decode("utf-8")
    (count,) = r.unpack("<I")
    heads = []
    for _ in range(count):
        name = r.blob().decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}Q")
        (tag,) = r.unpack("<B")
        if tag not in _DTYPES:
            raise ContractError(f"tensor {name}: unknown dtype tag {tag}")
        heads.append((name, dims, _DTYPES[tag]))
    tensors = OrderedDict()
    for name, dims, dtype in heads:
        n = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
        tensors[name] = np.frombuffer(r.take(n), dtype=dtype.newbyteorder("<")).reshape(dims).astype(dtype)
    (n_rec,) = r.unpack("<I")
    records = OrderedDict()
    for _ in range(n_rec):
        tag = r.blob().decode("utf-8")
        records[tag] = r.blob()
    if r.pos != len(buf):
        raise ContractError(f"{len(buf) - r.pos} trailing bytes after checkpoint")
    return Checkpoint(step, config_text, tensors, records)


def save(path, ck: Checkpoint):
    """Write atomically: a crash mid-write never clobbers the previous file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(ck))
    os.replace(tmp, path)


def load(path) -> Checkpoint:
    return decode(Path(path).read_bytes())


def json_record(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
