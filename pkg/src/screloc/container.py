"""Deterministic versioned binary container for arrays + JSON metadata.

Scene files and training checkpoints must round-trip bitwise and reproduce
byte-identical files for identical inputs, which rules out zip-based formats
(they embed timestamps). The format here is: a magic string, a little-endian
uint64 header length, a UTF-8 JSON header describing the payload, then the
raw array bytes in header order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SRLC\x00"


class ContainerError(Exception):
    """Raised when a container file is malformed or of an unexpected kind."""


def write_container(
    path: str | Path,
    kind: str,
    version: int,
    arrays: dict[str, np.ndarray],
    meta: dict | None = None,
) -> None:
    """Write arrays and metadata to ``path``.

    Array bytes are stored little-endian and C-contiguous; ``meta`` must be
    JSON-serializable. Writing the same content twice produces identical
    bytes.
    """
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob = le.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": le.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)

    header = {
        "kind": kind,
        "version": version,
        "meta": meta or {},
        "arrays": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def read_container(
    path: str | Path, expect_kind: str | None = None
) -> tuple[dict[str, np.ndarray], dict, str, int]:
    """Read a container, returning ``(arrays, meta, kind, version)``.

    Raises ContainerError on bad magic, truncation, or a kind mismatch.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ContainerError(f"not a screloc container: {path}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode())
        payload = fh.read()

    kind = header["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise ContainerError(f"expected kind {expect_kind!r}, found {kind!r} in {path}")

    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise ContainerError(f"truncated container: {path}")
        buf = payload[start : start + nbytes]
        arr = np.frombuffer(buf, dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return arrays, header["meta"], kind, header["version"]
