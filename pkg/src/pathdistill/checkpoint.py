"""Binary checkpoint of a search run.

Layout (little-endian)::

    b"CRM1" | u32 version | u32 record count
    record*: u32 name_len | name (utf-8) | u32 dtype | u32 rank | u32 dims[rank] | payload | u32 crc32(record)
    u32 crc32(everything before it)

dtype codes: 0 float32, 1 float64, 2 int64, 3 uint8. Run metadata (step,
board, rng states) travels as a uint8 JSON record named ``__state__``.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"CRM1"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8"), 3: np.dtype("u1")}
_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def write_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named arrays atomically (temp file in the same directory, then rename)."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype.newbyteorder("<") if arr.dtype.itemsize > 1 else arr.dtype)
        if code is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        encoded = name.encode()
        rec = b"".join([
            struct.pack("<I", len(encoded)), encoded,
            struct.pack("<II", code, arr.ndim), struct.pack(f"<{arr.ndim}I", *arr.shape),
            np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes(),
        ])
        parts += [rec, struct.pack("<I", zlib.crc32(rec))]
    body = b"".join(parts)
    blob = body + struct.pack("<I", zlib.crc32(body))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def read_tensors(path) -> dict[str, np.ndarray]:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum failure")
    version, count = struct.unpack("<II", body[4:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    out, pos = {}, 12
    try:
        for _ in range(count):
            start = pos
            (nlen,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + nlen].decode()
            pos += nlen
            code, rank = struct.unpack_from("<II", body, pos)
            pos += 8
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            dt = _DTYPES[code]
            size = int(np.prod(dims)) * dt.itemsize
            arr = np.frombuffer(body, dtype=dt, count=int(np.prod(dims)), offset=pos).reshape(dims)
            pos += size
            (rcrc,) = struct.unpack_from("<I", body, pos)
            if zlib.crc32(body[start:pos]) != rcrc:
                raise CheckpointError(f"{path}: checksum failure in record {name!r}")
            pos += 4
            out[name] = arr.astype(dt.newbyteorder("="))
    except (struct.error, KeyError, ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: malformed record ({exc})") from exc
    return out


def pack_json(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj).encode(), dtype=np.uint8).copy()


def unpack_json(arr: np.ndarray):
    return json.loads(arr.tobytes().decode())
