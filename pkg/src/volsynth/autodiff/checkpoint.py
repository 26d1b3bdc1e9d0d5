"""Named weight collections and the binary checkpoint container.

Layout (all integers little-endian uint32 unless noted)::

    magic            8 bytes  b"VSYNCKPT"
    format_version   uint32   (currently 1)
    arch_len, arch   utf-8 architecture tag, e.g. "vnet"
    meta_len, meta   utf-8 JSON object {"config": {...}, "meta": {...}}, keys sorted
    n_records        uint32
    n_records x:
        name_len, name   utf-8 parameter name
        ndim             uint32
        dims             ndim x uint32
        values           prod(dims) x float32, little-endian, C order
    crc32            uint32 over every preceding byte
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Optional

import numpy as np

from ..errors import CorruptFileError, FormatError, IncompatibleCheckpointError
from .tensor import Parameter

MAGIC = b"VSYNCKPT"
FORMAT_VERSION = 1


@dataclass
class ModelWeights:
    """Architecture tag, JSON-able model config, free-form metadata and ordered name -> array map."""

    arch: str
    config: dict = field(default_factory=dict)
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_parameters(cls, arch: str, config: dict, params: Iterable[Parameter]) -> "ModelWeights":
        tensors = {}
        for p in params:
            if p.name in tensors:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            tensors[p.name] = np.array(p.data, dtype=np.float32)
        # JSON round trip so in-memory and reloaded configs compare equal (tuples become lists)
        return cls(arch, json.loads(json.dumps(config)), tensors)

    def identical(self, other: "ModelWeights") -> bool:
        if self.arch != other.arch or self.config != other.config or self.meta != other.meta:
            return False
        if list(self.tensors) != list(other.tensors):
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.tensors.values(), other.tensors.values())
        )


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def encode_checkpoint(w: ModelWeights) -> bytes:
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), _pack_str(w.arch),
             _pack_str(json.dumps({"config": w.config, "meta": w.meta}, sort_keys=True)), struct.pack("<I", len(w.tensors))]
    for name, arr in w.tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        parts.append(_pack_str(name))
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptFileError("checkpoint truncated")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def decode_checkpoint(buf: bytes) -> ModelWeights:
    if buf[:8] != MAGIC:
        raise FormatError("not a volsynth checkpoint (bad magic)")
    if len(buf) < 12:
        raise CorruptFileError("checkpoint truncated")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptFileError("checkpoint checksum mismatch")
    r = _Reader(body)
    r.take(8)
    version = r.u32()
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint format version {version}")
    arch = r.string()
    header = json.loads(r.string())
    tensors = {}
    for _ in range(r.u32()):
        name = r.string()
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        tensors[name] = arr.astype(np.float32)
    if r.pos != len(body):
        raise CorruptFileError("trailing bytes after last checkpoint record")
    return ModelWeights(arch, header.get("config", {}), tensors, header.get("meta", {}))


def save_checkpoint(w: ModelWeights, path) -> None:
    Path(path).write_bytes(encode_checkpoint(w))


def load_checkpoint(path, expected_arch: Optional[str] = None) -> ModelWeights:
    """Read a checkpoint; with ``expected_arch`` set, a different tag raises."""
    w = decode_checkpoint(Path(path).read_bytes())
    if expected_arch is not None and w.arch != expected_arch:
        raise IncompatibleCheckpointError(f"checkpoint holds a {w.arch!r} model, expected {expected_arch!r}")
    return w
