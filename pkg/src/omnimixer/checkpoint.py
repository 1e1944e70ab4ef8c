"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic        8 bytes   b"OMXCKPT\\0"
    version      u32       FORMAT_VERSION
    meta_len     u32       length of the metadata blob
    meta         bytes     UTF-8 JSON, keys sorted (config, iteration, extra state)
    n_tensors    u32
    table        n_tensors entries, sorted by name:
                   name_len u16, name bytes (UTF-8), ndim u8, dims u32 * ndim, offset u64
    payload_len  u64       bytes of payload that follow
    payload      float32 values, tensors back to back at their offsets

Writing is canonical: the same content always produces the same bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (CheckpointFormatError, CheckpointTruncatedError, CheckpointVersionError,
                     UnknownTensorError)

MAGIC = b"OMXCKPT\x00"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray]
    config: dict
    iteration: int = 0
    extra: dict = field(default_factory=dict)


def encode(ckpt: Checkpoint) -> bytes:
    meta = json.dumps({"config": ckpt.config, "iteration": int(ckpt.iteration), "extra": ckpt.extra},
                      sort_keys=True, separators=(",", ":")).encode()
    names = sorted(ckpt.tensors)
    table, chunks, offset = [], [], 0
    for name in names:
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        raw = name.encode()
        table.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
                     + struct.pack(f"<{arr.ndim}I", *arr.shape) + struct.pack("<Q", offset))
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    return b"".join([MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta)), meta,
                     struct.pack("<I", len(names)), *table, struct.pack("<Q", offset), *chunks])


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(
                f"checkpoint ends at byte {len(self.buf)}, needed {self.pos + n}"
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if len(buf) < len(MAGIC) and MAGIC.startswith(buf) and buf:
        raise CheckpointTruncatedError(f"checkpoint ends inside the magic bytes ({len(buf)} bytes)")
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("not an omnimixer checkpoint (bad magic bytes)")
    r.take(len(MAGIC))
    version, meta_len = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    try:
        meta = json.loads(r.take(meta_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"corrupt checkpoint metadata: {exc}") from exc
    (count,) = r.unpack("<I")
    entries = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        try:
            name = r.take(name_len).decode()
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError(f"corrupt tensor name: {exc}") from exc
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        (offset,) = r.unpack("<Q")
        entries.append((name, shape, offset))
    (payload_len,) = r.unpack("<Q")
    payload = r.take(payload_len)
    tensors = {}
    for name, shape, offset in entries:
        n = int(np.prod(shape, dtype=np.int64)) * 4
        if offset + n > payload_len:
            raise CheckpointTruncatedError(f"tensor {name} extends past the payload")
        tensors[name] = np.frombuffer(payload, dtype="<f4", count=n // 4, offset=offset).reshape(shape).copy()
    if r.pos != len(buf):
        raise CheckpointFormatError(f"{len(buf) - r.pos} trailing bytes after payload")
    return Checkpoint(tensors, meta["config"], meta["iteration"], meta.get("extra", {}))


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode(ckpt))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    return decode(Path(path).read_bytes())


def assign_state(registry: dict, tensors: dict[str, np.ndarray], prefix: str = "") -> None:
    """Copy stored arrays into the registry's tensors (matching names under ``prefix``).

    Every stored name under the prefix must exist in the registry and every
    registry entry must be present in the checkpoint.
    """
    stored = {k[len(prefix):]: v for k, v in tensors.items() if k.startswith(prefix)}
    unknown = sorted(set(stored) - set(registry))
    if unknown:
        raise UnknownTensorError(f"checkpoint tensor {prefix}{unknown[0]} has no counterpart in the model")
    missing = sorted(set(registry) - set(stored))
    if missing:
        raise CheckpointFormatError(f"checkpoint lacks tensor {prefix}{missing[0]}")
    for name, arr in stored.items():
        target = registry[name]
        if tuple(arr.shape) != target.shape:
            raise CheckpointVersionError(
                f"tensor {prefix}{name} has shape {tuple(arr.shape)}, model expects {target.shape}"
            )
        target.data[...] = arr
