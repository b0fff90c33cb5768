"""Shared binary interchange format.

Arrays are stored row-major as little-endian float32 with a 16-byte header:
4-byte magic ``SCLT``, uint32 version, uint64 element count. Composite files
(channel stats, mapper checkpoints) prepend a length-framed UTF-8 JSON header
before their array blocks.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

MAGIC = b"SCLT"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")  # magic, version, element count


def write_array(fp, arr: np.ndarray) -> None:
    """Write one float32 block (values are cast from the array's dtype)."""
    data = np.ascontiguousarray(arr, dtype="<f4")
    fp.write(_HEADER.pack(MAGIC, VERSION, data.size))
    fp.write(data.tobytes())


def read_array(fp) -> np.ndarray:
    """Read one float32 block as a flat float64 array."""
    header = fp.read(_HEADER.size)
    if len(header) != _HEADER.size:
        raise ValueError("truncated array block header")
    magic, version, count = _HEADER.unpack(header)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ValueError(f"unsupported format version {version}")
    raw = fp.read(4 * count)
    if len(raw) != 4 * count:
        raise ValueError("truncated array block payload")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64)


def array_to_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    write_array(buf, arr)
    return buf.getvalue()


def array_from_bytes(data: bytes) -> np.ndarray:
    return read_array(io.BytesIO(data))


def save_array(path, arr: np.ndarray) -> None:
    """Write one array to a standalone block file (shape is the caller's contract)."""
    with open(path, "wb") as fp:
        write_array(fp, arr)


def load_array(path) -> np.ndarray:
    with open(path, "rb") as fp:
        return read_array(fp)


def write_json_header(fp, obj: dict) -> None:
    payload = json.dumps(obj, sort_keys=True).encode("utf-8")
    fp.write(struct.pack("<I", len(payload)))
    fp.write(payload)


def read_json_header(fp) -> dict:
    raw = fp.read(4)
    if len(raw) != 4:
        raise ValueError("truncated JSON header length")
    (length,) = struct.unpack("<I", raw)
    payload = fp.read(length)
    if len(payload) != length:
        raise ValueError("truncated JSON header payload")
    return json.loads(payload.decode("utf-8"))
