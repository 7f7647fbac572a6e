"""Single-file archive of a JSON header plus named raw tensors.

Layout (all integers little-endian)::

    bytes 0..7     magic b"UAEDARC1"
    bytes 8..15    uint64 header length N
    next N bytes   UTF-8 JSON header:
                   {"meta": {...},
                    "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    remainder      tensor payloads, each row-major (C order) little-endian,
                   at ``offset`` bytes from the start of the payload section

``dtype`` is a numpy dtype name (``float32``, ``int64``, ``uint8`` ...).
Writing goes through a temporary file and an atomic rename.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"UAEDARC1"


class ArchiveError(ValueError):
    pass


def _to_numpy(value) -> np.ndarray:
    if hasattr(value, "detach"):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    return np.ascontiguousarray(arr)


def save_archive(path, meta: dict, tensors: dict) -> Path:
    path = Path(path)
    table = []
    blobs = []
    offset = 0
    for name in tensors:
        arr = _to_numpy(tensors[name])
        raw = arr.tobytes(order="C")
        table.append(
            {"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "tensors": table}, sort_keys=True, separators=(",", ":")).encode()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)
    os.replace(tmp, path)
    return path


def load_archive(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise ArchiveError(f"{path} is not a checkpoint archive")
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16 : 16 + n])
    base = 16 + n
    tensors = {}
    for entry in header["tensors"]:
        start = base + entry["offset"]
        raw = data[start : start + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise ArchiveError(f"{path}: truncated payload for {entry['name']}")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]).newbyteorder("<"))
        tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return header["meta"], tensors


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
