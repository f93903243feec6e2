"""Versioned little-endian binary container for named float64 arrays + JSON meta.

Used for expert and diffusion-model checkpoints. Byte layout:
magic "PDBN", version u32, meta_len u32, meta (UTF-8 JSON, sorted keys),
n_arrays u32, then per array: name_len u16, name UTF-8, ndim u8, dims u32...,
data float64 LE. Writing is deterministic for identical inputs.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError

_MAGIC = b"PDBN"
_VERSION = 1


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.blob):
            raise FormatError(
                f"truncated blob: need {n} bytes at byte {self.offset}, "
                f"file ends at {len(self.blob)}"
            )
        out = self.blob[self.offset : self.offset + n]
        self.offset += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def write_blob(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    parts = [_MAGIC, struct.pack("<I", _VERSION)]
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts.append(struct.pack("<I", len(meta_bytes)))
    parts.append(meta_bytes)
    parts.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=np.float64)
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)))
        parts.append(name_bytes)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def read_blob(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    if reader.take(4) != _MAGIC:
        raise FormatError("bad magic at byte 0")
    (version,) = reader.unpack("<I")
    if version != _VERSION:
        raise FormatError(f"unsupported blob version {version} at byte 4")
    (meta_len,) = reader.unpack("<I")
    meta = json.loads(reader.take(meta_len).decode("utf-8"))
    (n_arrays,) = reader.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (ndim,) = reader.unpack("<B")
        dims = reader.unpack(f"<{ndim}I")
        data = np.frombuffer(reader.take(8 * int(np.prod(dims))), dtype="<f8")
        arrays[name] = data.reshape(dims).astype(np.float64)
    if reader.offset != len(reader.blob):
        raise FormatError(f"trailing bytes at byte {reader.offset}")
    return meta, arrays
