"""Versioned binary container for named tensors plus JSON metadata.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON
header (format version, metadata, tensor names/dtypes/shapes), then the
raw C-order tensor payloads in header order. Writing is deterministic:
the same tensors and metadata always produce the same bytes, which the
reproducibility checks rely on.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"NTCKPT01"
FORMAT_VERSION = 1

_DTYPES = {"float32": np.float32, "float64": np.float64}


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    payloads = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype.name not in _DTYPES:
            raise ValueError(f"unsupported dtype {arr.dtype} for tensor {name}")
        entries.append({"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape)})
        payloads.append(arr.tobytes())
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "meta": meta or {}, "tensors": entries},
        sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for chunk in payloads:
            fh.write(chunk)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a container back; validates magic, version and every shape."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version "
                         f"{header.get('format_version')}")
    tensors: dict[str, np.ndarray] = {}
    offset = 16 + hlen
    for entry in header["tensors"]:
        dtype = _DTYPES[entry["dtype"]]
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * np.dtype(dtype).itemsize
        chunk = blob[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise ValueError(f"{path}: truncated payload for tensor {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes after tensor payloads")
    return tensors, header["meta"]
