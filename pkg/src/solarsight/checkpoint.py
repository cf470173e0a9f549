"""Versioned binary checkpoint container for named arrays.

Wire format, little-endian throughout:

    magic   4 bytes  "DSEW"
    version u32      currently 1
    count   u32      number of entries
    entry*  name_len u32, name (UTF-8), rank u32, dims u32[rank],
            payload float32[product(dims)] row-major
    crc     u32      CRC32 of every preceding byte

Entries are written sorted by name, so identical contents produce identical
bytes.  Payloads are always float32: float64 arrays are cast on save.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import DataError

MAGIC = b"DSEW"
VERSION = 1


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype="<f4", order="C")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    body = b"".join(chunks)
    with open(path, "wb") as f:
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 16 or data[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    body, crc_bytes = data[:-4], data[-4:]
    (stored_crc,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(body) != stored_crc:
        raise DataError(f"{path}: CRC mismatch, file is corrupt")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")

    out: dict[str, np.ndarray] = {}
    pos = 12
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", body, pos)
        pos += 4
        name = body[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (rank,) = struct.unpack_from("<I", body, pos)
        pos += 4
        dims = struct.unpack_from(f"<{rank}I", body, pos)
        pos += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(body, dtype="<f4", count=n, offset=pos).reshape(tuple(dims))
        pos += 4 * n
        out[name] = arr.astype(np.float32)  # writable copy, native order
    if pos != len(body):
        raise DataError(f"{path}: trailing bytes after last entry")
    return out
