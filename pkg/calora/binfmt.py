"""
Versioned binary container for named float64 arrays.

Layout (all integers little-endian)::

    offset 0   8 bytes   magic (b"CALRCKPT" for checkpoints, b"CALRLORA" for adapters)
    offset 8   uint32    format version
    offset 12  uint32    header length H in bytes
    offset 16  H bytes   UTF-8 JSON header; header["arrays"] lists
                         {"name", "shape", "offset", "nbytes"} per array
    16 + H     padding   zero bytes up to the next multiple of 8
    payload    arrays    float64 little-endian, C order, each at
                         payload_start + offset (offsets are multiples of 8)
"""

import json
import struct
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np

from .errors import ContractError

FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")


def write_container(path, magic: bytes, header: Dict[str, Any], arrays: Dict[str, np.ndarray]) -> None:
    if len(magic) != 8:
        raise ContractError("magic must be 8 bytes")
    table, blobs, offset = [], [], 0
    for name, value in arrays.items():
        blob = np.ascontiguousarray(value, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(np.shape(value)), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = dict(header, arrays=table)
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    padding = (-(_PREFIX.size + len(encoded))) % 8
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(magic, FORMAT_VERSION, len(encoded)))
        f.write(encoded)
        f.write(b"\0" * padding)
        for blob in blobs:
            f.write(blob)


def read_container(path, magic: bytes) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise ContractError(f"{path}: truncated container")
    found, version, header_len = _PREFIX.unpack_from(raw, 0)
    if found != magic:
        raise ContractError(f"{path}: expected magic {magic!r}, found {found!r}")
    if version != FORMAT_VERSION:
        raise ContractError(f"{path}: unsupported format version {version}")
    header = json.loads(raw[_PREFIX.size : _PREFIX.size + header_len].decode("utf-8"))
    start = _PREFIX.size + header_len
    start += (-start) % 8
    arrays = {}
    for entry in header.pop("arrays"):
        lo = start + entry["offset"]
        data = np.frombuffer(raw, dtype="<f8", count=entry["nbytes"] // 8, offset=lo)
        arrays[entry["name"]] = data.reshape(entry["shape"]).astype(np.float64)
    return header, arrays
