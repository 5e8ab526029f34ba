"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"HFCK"  u16 version=1  u32 entry_count
    per entry: u16 name_len, UTF-8 name, 4 x u32 dims, float32 LE values
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .network import NetworkParams

MAGIC = b"HFCK"
VERSION = 1
MAX_ELEMENTS = 1 << 31


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class DimOverflowError(CheckpointError):
    pass


def encode(params: NetworkParams) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(params.entries))]
    for name, value in params.items():
        if value.ndim != 4:
            raise ValueError(f"{name}: checkpoint entries must be 4-D, got {value.shape}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<4I", *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(blob: bytes) -> NetworkParams:
    view = memoryview(blob)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise TruncatedError(f"file ends inside {what} (offset {pos}, need {n} bytes)")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise BadMagicError("not a checkpoint file (bad magic)")
    version, count = struct.unpack("<HI", take(6, "header"))
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}")
    entries = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "entry name length"))
        name = bytes(take(name_len, "entry name")).decode("utf-8")
        dims = struct.unpack("<4I", take(16, f"dims of {name}"))
        n = 1
        for d in dims:
            n *= d
        if n >= MAX_ELEMENTS or 4 * n > len(view) - pos:
            if n >= MAX_ELEMENTS:
                raise DimOverflowError(f"{name}: dims {dims} overflow")
            raise TruncatedError(f"{name}: dims {dims} exceed the remaining file")
        data = np.frombuffer(take(4 * n, f"values of {name}"), dtype="<f4")
        entries[name] = data.astype(np.float32).reshape(dims)
    return NetworkParams(entries)


def save_checkpoint(params: NetworkParams, path) -> None:
    Path(path).write_bytes(encode(params))


def load_checkpoint(path) -> NetworkParams:
    return decode(Path(path).read_bytes())
