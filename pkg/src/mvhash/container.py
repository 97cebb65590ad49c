"""Versioned binary container used for checkpoints, code files and index files.

Layout (little-endian)::

    magic (4 bytes) | u32 version | u64 header length | header (UTF-8 JSON)
    | array payloads, concatenated in header order

The header is ``{"meta": {...}, "arrays": [{"name", "dtype", "shape",
"offset", "nbytes"}, ...]}`` serialized with sorted keys and no timestamps,
so identical content always produces identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from mvhash.errors import DataError

VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_DTYPES = {"f8": "<f8", "f4": "<f4", "u8": "<u8", "i8": "<i8", "u1": "|u1"}


def _code(dtype: np.dtype) -> str:
    code = f"{dtype.kind}{dtype.itemsize}"
    if code not in _DTYPES:
        raise DataError(f"unsupported array dtype {dtype}")
    return code


def dumps(magic: bytes, meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> bytes:
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        code = _code(arr.dtype)
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
        entries.append({"name": name, "dtype": code, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True, separators=(",", ":")).encode()
    return _PREFIX.pack(magic, VERSION, len(header)) + header + b"".join(blobs)


def save(path: str | Path, magic: bytes, meta: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(magic, meta, arrays))


def loads(buf: bytes, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(buf) < _PREFIX.size:
        raise DataError("container too short")
    got, version, hlen = _PREFIX.unpack_from(buf)
    if got != magic:
        raise DataError(f"wrong file type: magic {got!r}, expected {magic!r}")
    if version != VERSION:
        raise DataError(f"unsupported container version {version} (expected {VERSION})")
    start = _PREFIX.size + hlen
    header = json.loads(buf[_PREFIX.size:start].decode())
    arrays = {}
    for e in header["arrays"]:
        data = np.frombuffer(buf, dtype=_DTYPES[e["dtype"]], count=int(np.prod(e["shape"], dtype=np.int64)),
                             offset=start + e["offset"])
        arrays[e["name"]] = data.reshape(e["shape"]).copy()
    return header["meta"], arrays


def load(path: str | Path, magic: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{p}: no such file")
    return loads(p.read_bytes(), magic)
