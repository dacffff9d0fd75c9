"""Deterministic binary checkpoint format for named parameter tensors.

Layout (all integers little-endian):

    bytes 0..7    magic b"HFCKPT01" (format version lives in the magic)
    bytes 8..15   uint64 header length in bytes
    header        UTF-8 JSON, sorted keys, compact separators:
                  {"format_version": 1,
                   "meta": {...},
                   "tensors": [{"name": str, "shape": [...], "offset": int},
                               ...]}
    payload       raw float64 little-endian C-order tensor data, tensors
                  concatenated in header order (names sorted)

Tensors are stored sorted by name and offsets are byte positions within the
payload, so two saves of the same values are byte-identical regardless of
dict insertion order. `meta` must be JSON-serializable and should not carry
timestamps if reproducible files are wanted.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"HFCKPT01"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict, meta: dict | None = None) -> None:
    """Write named arrays (cast to float64) plus optional metadata."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        if not isinstance(name, str):
            raise CheckpointError(f"tensor names must be strings, got {name!r}")
        array = np.asarray(tensors[name], dtype=_DTYPE)
        blob = array.tobytes()   # always C-order bytes, keeps 0-d shapes
        entries.append({"name": name, "shape": list(array.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "meta": meta if meta is not None else {},
        "tensors": entries,
    }
    try:
        header_bytes = json.dumps(
            header, sort_keys=True, separators=(",", ":")
        ).encode("utf-8")
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"meta is not JSON-serializable: {exc}") from exc
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Read a checkpoint; returns (tensors dict, meta dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 8:
        raise CheckpointError(f"file too short to be a checkpoint: {path}")
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(
            f"bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}: {path}"
        )
    (header_len,) = struct.unpack("<Q", raw[len(MAGIC): len(MAGIC) + 8])
    header_start = len(MAGIC) + 8
    if header_start + header_len > len(raw):
        raise CheckpointError(f"truncated header: {path}")
    try:
        header = json.loads(raw[header_start: header_start + header_len])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt header JSON: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported format_version {header.get('format_version')}"
        )
    payload = raw[header_start + header_len:]
    tensors = {}
    for entry in header["tensors"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * _DTYPE.itemsize
        if offset < 0 or offset + nbytes > len(payload):
            raise CheckpointError(
                f"tensor {name!r} extends past end of payload: {path}"
            )
        flat = np.frombuffer(payload, dtype=_DTYPE, count=count, offset=offset)
        tensors[name] = flat.reshape(shape).copy()
    return tensors, header.get("meta", {})
