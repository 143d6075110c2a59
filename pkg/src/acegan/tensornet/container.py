"""Versioned binary container for named float64 arrays.

Layout (all integers little-endian)::

    magic  b"TNETARR\\0"          8 bytes
    version                      uint32
    count                        uint32
    count x entry:
        name length              uint32
        name                     utf-8 bytes
        rank                     uint32
        shape                    rank x uint64
        payload                  prod(shape) x float64 LE
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNETARR\x00"
VERSION = 1


class ContainerError(ValueError):
    pass


def dumps(arrays: dict[str, np.ndarray]) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<II", VERSION, len(arrays))
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += np.ascontiguousarray(arr).tobytes()
    return bytes(out)


def loads(data: bytes) -> dict[str, np.ndarray]:
    if data[:8] != MAGIC:
        raise ContainerError("not an array container (bad magic)")
    version, count = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    pos = 16
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            pos += 4
            name = data[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", data, pos)
            pos += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(data):
                raise ContainerError(f"entry {name!r} truncated")
            out[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except struct.error as exc:
        raise ContainerError(f"truncated container: {exc}") from None
    return out


def save(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(arrays))


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
