"""Binary checkpoint format for named float64 parameter sets.

Layout (all integers little-endian):

    magic   5 bytes  b"SHLB1"
    count   uint32   number of entries
    entry   repeated:
        name_len  uint16
        name      utf-8 bytes
        ndim      uint8
        dims      ndim * uint32
        payload   prod(dims) * float64 (little-endian)

Entries are written in dictionary insertion order and read back in file
order, so a save/load round trip preserves ordering.
"""

from __future__ import annotations

import os
import struct

import numpy as np

MAGIC = b"SHLB1"


class CheckpointError(ValueError):
    """Raised for malformed or truncated checkpoint files."""


def save_checkpoint(path, arrays: dict[str, np.ndarray]):
    """Write named arrays to ``path`` atomically (temp file + rename)."""
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            data = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
            encoded = name.encode("utf-8")
            if len(encoded) > 0xFFFF:
                raise CheckpointError(f"parameter name too long: {name!r}")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.astype("<f8").tobytes())
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises:
        CheckpointError: bad magic, truncated file, or trailing bytes.
    """
    with open(path, "rb") as fh:
        blob = fh.read()

    def take(n: int, what: str) -> bytes:
        nonlocal offset
        if offset + n > len(blob):
            raise CheckpointError(f"truncated checkpoint: expected {what} at byte {offset}")
        chunk = blob[offset:offset + n]
        offset += n
        return chunk

    offset = 0
    if take(len(MAGIC), "magic") != MAGIC:
        raise CheckpointError(f"bad magic in {path}: not a checkpoint file")
    (count,) = struct.unpack("<I", take(4, "entry count"))
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1, "ndim"))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim, "dims"))
        n_items = int(np.prod(dims)) if ndim else 1
        payload = take(8 * n_items, f"payload of '{name}'")
        arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
        if name in out:
            raise CheckpointError(f"duplicate parameter name '{name}'")
        out[name] = arr
    if offset != len(blob):
        raise CheckpointError(f"trailing bytes after last entry in {path}")
    return out
