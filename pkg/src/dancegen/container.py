"""Minimal binary tensor container shared by every module.

Layout (all integers little-endian):

    bytes 0..3   magic "P2DT"
    bytes 4..7   format version, u32 (currently 1)
    bytes 8..11  rank, u32
    then rank    dims, u64 each
    then         payload, float32 row-major

One tensor per file. Checkpoints and corpora are directories of these plus a
key=value manifest.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FileFormatError

MAGIC = b"P2DT"
VERSION = 1


def write_tensor(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head != MAGIC:
            raise FileFormatError(f"{path}: bad magic {head!r}, expected {MAGIC!r}")
        meta = fh.read(8)
        if len(meta) != 8:
            raise FileFormatError(f"{path}: truncated header")
        version, rank = struct.unpack("<II", meta)
        if version != VERSION:
            raise FileFormatError(f"{path}: unsupported container version {version}")
        if rank > 8:
            raise FileFormatError(f"{path}: implausible rank {rank}")
        dim_bytes = fh.read(8 * rank)
        if len(dim_bytes) != 8 * rank:
            raise FileFormatError(f"{path}: truncated dims")
        dims = struct.unpack(f"<{rank}Q", dim_bytes)
        count = 1
        for d in dims:
            count *= d
        payload = fh.read(4 * count)
        if len(payload) != 4 * count:
            raise FileFormatError(
                f"{path}: truncated payload, expected {4 * count} bytes got {len(payload)}"
            )
        if fh.read(1):
            raise FileFormatError(f"{path}: trailing bytes after payload")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).copy()


def write_manifest(path, entries: dict) -> None:
    """key=value manifest, one pair per line, keys sorted for stable bytes."""
    with open(path, "w") as fh:
        for key in sorted(entries):
            value = entries[key]
            fh.write(f"{key}={value}\n")


def read_manifest(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "=" not in line:
                raise FileFormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key] = value
    return out
