"""Versioned binary container for named float64 arrays.

Layout: ``FAPK`` magic, uint16 version, uint32 header length, a UTF-8 JSON
header (sorted keys) listing array names and shapes plus free metadata, then
the arrays' little-endian float64 payloads back to back in header order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import FortAttackError

MAGIC = b"FAPK"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


class CheckpointFormatError(FortAttackError, ValueError):
    pass


def dump_arrays(arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    entries = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    header = json.dumps({"arrays": entries, "meta": meta or {}}, sort_keys=True,
                        separators=(",", ":")).encode()
    payload = b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in arrays.values())
    return _PREFIX.pack(MAGIC, VERSION, len(header)) + header + payload


def load_arrays(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if len(blob) < _PREFIX.size:
        raise CheckpointFormatError("truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    try:
        header = json.loads(blob[start:start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"corrupt header: {exc}") from None
    offset = start + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * n
        if end > len(blob):
            raise CheckpointFormatError("truncated payload")
        arrays[entry["name"]] = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(blob):
        raise CheckpointFormatError("trailing bytes after payload")
    return arrays, header["meta"]
