"""Deterministic single-file container for named float64 arrays.

Layout: 8-byte little-endian header length, a JSON header (entry names,
shapes, byte offsets, plus caller metadata), then the concatenated raw
array bytes. No timestamps or other run-dependent bytes, so identical
contents serialize to identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

_MAGIC = "cellshift-arrays-v1"


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = {}
    offset = 0
    blobs = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        raw = arr.tobytes()
        entries[name] = {"shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format": _MAGIC, "meta": meta or {}, "entries": entries},
        sort_keys=True, separators=(",", ":"),
    ).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)
    tmp.replace(path)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    try:
        with open(path, "rb") as f:
            (hlen,) = struct.unpack("<Q", f.read(8))
            header = json.loads(f.read(hlen).decode())
            if header.get("format") != _MAGIC:
                raise CheckpointError(f"{path}: unrecognized container format")
            payload = f.read()
    except (OSError, ValueError, struct.error) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from exc
    arrays = {}
    for name, entry in header["entries"].items():
        start, nbytes = entry["offset"], entry["nbytes"]
        raw = payload[start:start + nbytes]
        if len(raw) != nbytes:
            raise CheckpointError(f"{path}: truncated payload for {name!r}")
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).copy()
    return arrays, header.get("meta", {})
