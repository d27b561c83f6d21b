"""Binary tensor container used for checkpoints and feature blobs.

Layout (all integers little-endian)::

    b"TE2SL\\x01"                    magic + format version
    u32                             tensor count
    per tensor:
        u16 name length, UTF-8 name
        u8 rank, rank x u32 dims
        f64 payload, row-major
    u64                             FNV-1a hash of every preceding byte
"""

from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .kernels import fnv1a64

MAGIC = b"TE2SL"
VERSION = 1


class CheckpointError(Exception):
    code = "checkpoint"


class BadMagicError(CheckpointError):
    code = "bad-magic"


class VersionError(CheckpointError):
    code = "bad-version"


class ChecksumError(CheckpointError):
    code = "bad-checksum"


class FormatError(CheckpointError):
    code = "bad-format"


def encode_tensors(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, bytes([VERSION]), struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(arr, dtype="<f8")
        if arr.ndim > 255:
            raise ValueError(f"{name}: rank {arr.ndim} too large")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a64(body))


def decode_tensors(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < len(MAGIC) + 1 or blob[: len(MAGIC)] != MAGIC:
        raise BadMagicError("not a TE2SL tensor file (bad magic)")
    if blob[len(MAGIC)] != VERSION:
        raise VersionError(f"unsupported format version {blob[len(MAGIC)]}")
    if len(blob) < len(MAGIC) + 1 + 4 + 8:
        raise FormatError("file truncated")
    body, tail = blob[:-8], blob[-8:]
    pos = len(MAGIC) + 1

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(body):
            raise FormatError("file truncated or malformed")
        chunk = body[pos : pos + n]
        pos += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack("<H", take(2))
            name = take(nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", take(1))
            dims = struct.unpack(f"<{rank}I", take(4 * rank))
            n = int(np.prod(dims, dtype=np.int64))
            arr = np.frombuffer(take(8 * n), dtype="<f8").reshape(dims).astype(np.float64)
            if name in out:
                raise FormatError(f"duplicate tensor name {name!r}")
            out[name] = arr
    except UnicodeDecodeError:
        raise FormatError("tensor name is not valid UTF-8") from None
    if pos != len(body):
        raise FormatError("trailing bytes after last tensor")
    if struct.unpack("<Q", tail)[0] != fnv1a64(body):
        raise ChecksumError("checksum mismatch")
    return out


def write_tensors(path, tensors: Mapping[str, np.ndarray]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_tensors(tensors))
    os.replace(tmp, path)


def read_tensors(path) -> dict[str, np.ndarray]:
    return decode_tensors(Path(path).read_bytes())
