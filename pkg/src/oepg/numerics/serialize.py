"""Binary container for named f64 matrices plus a JSON metadata header.

Layout::

    b"OEPGCKPT"                      8-byte magic
    uint64 little-endian             header length in bytes
    header                           UTF-8 JSON {"meta": ..., "manifest": [[name, rows, cols], ...]}
    payloads                         row-major little-endian f64, manifest order
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"OEPGCKPT"
_F64 = np.dtype("<f8")


class CheckpointFormatError(ValueError):
    pass


def write_arrays(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    manifest = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"entry {name!r} must be 2-D, got shape {arr.shape}")
        manifest.append([name, int(arr.shape[0]), int(arr.shape[1])])
    header = json.dumps({"meta": meta, "manifest": manifest}, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for name, _, _ in manifest:
            fh.write(np.ascontiguousarray(arrays[name], dtype=_F64).tobytes())
    tmp.replace(path)


def read_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError("missing or corrupt checkpoint magic")
    (hlen,) = struct.unpack_from("<Q", blob, len(MAGIC))
    start = len(MAGIC) + 8
    if start + hlen > len(blob):
        raise CheckpointFormatError("truncated checkpoint header")
    try:
        header = json.loads(blob[start : start + hlen].decode("utf-8"))
        manifest = header["manifest"]
        meta = header["meta"]
    except (ValueError, KeyError) as exc:
        raise CheckpointFormatError(f"corrupt checkpoint header: {exc}") from exc
    offset = start + hlen
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest:
        try:
            name, rows, cols = str(entry[0]), int(entry[1]), int(entry[2])
        except (TypeError, ValueError, IndexError) as exc:
            raise CheckpointFormatError(f"corrupt manifest entry {entry!r}") from exc
        if rows < 0 or cols < 0:
            raise CheckpointFormatError(f"negative shape in manifest entry {name!r}")
        nbytes = rows * cols * _F64.itemsize
        if offset + nbytes > len(blob):
            raise CheckpointFormatError(f"truncated payload for entry {name!r}")
        arrays[name] = (
            np.frombuffer(blob, dtype=_F64, count=rows * cols, offset=offset)
            .reshape(rows, cols)
            .astype(np.float64)
        )
        offset += nbytes
    if offset != len(blob):
        raise CheckpointFormatError(f"{len(blob) - offset} trailing bytes after last entry")
    return arrays, meta
