"""The "SDTN" named-tensor container.

Layout (little-endian)::

    b"SDTN" | u32 version=1 | u32 count
    per tensor: u16 name_len | name (UTF-8) | u8 rank | u32 extent * rank | f32 payload
"""

from __future__ import annotations

import io
import struct
from typing import BinaryIO, Mapping

import numpy as np

MAGIC = b"SDTN"
VERSION = 1


class ContainerError(ValueError):
    pass


def write_tensors(stream: BinaryIO, tensors: Mapping[str, np.ndarray]) -> None:
    stream.write(MAGIC)
    stream.write(struct.pack("<II", VERSION, len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ContainerError(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(arr)
        if arr.ndim > 255:
            raise ContainerError(f"rank {arr.ndim} too large for {name}")
        stream.write(struct.pack("<H", len(raw)))
        stream.write(raw)
        stream.write(struct.pack("<B", arr.ndim))
        stream.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        stream.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    buf = stream.read(n)
    if len(buf) != n:
        raise ContainerError("unexpected end of tensor container")
    return buf


def read_tensors(stream: BinaryIO) -> dict[str, np.ndarray]:
    if _read_exact(stream, 4) != MAGIC:
        raise ContainerError("not an SDTN container (bad magic)")
    version, count = struct.unpack("<II", _read_exact(stream, 8))
    if version != VERSION:
        raise ContainerError(f"unsupported SDTN version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", _read_exact(stream, 2))
        name = _read_exact(stream, name_len).decode("utf-8")
        (rank,) = struct.unpack("<B", _read_exact(stream, 1))
        shape = struct.unpack(f"<{rank}I", _read_exact(stream, 4 * rank))
        n = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(_read_exact(stream, 4 * n), dtype="<f4").astype(np.float32)
        out[name] = data.reshape(shape)
    return out


def save_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        write_tensors(f, tensors)


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        return read_tensors(f)


def to_bytes(tensors: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    write_tensors(buf, tensors)
    return buf.getvalue()
