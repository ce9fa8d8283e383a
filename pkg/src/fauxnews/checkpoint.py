"""Binary checkpoint format for model parameters.

Single file, versioned header, 64-bit little-endian payload:

    magic(8) | version u32 | count u32
    per entry: name_len u16 | name utf-8 | ndim u8 | dims u64 * ndim | float64 data

Round-trips are bitwise exact, which the training freeze checks rely on.
"""

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"FXNEWSCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, arrays: dict) -> None:
    """Write named float64 arrays to ``path`` atomically (temp file + rename)."""
    path = Path(path)
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<II", VERSION, len(arrays))
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        encoded = name.encode("utf-8")
        payload += struct.pack("<H", len(encoded))
        payload += encoded
        payload += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            payload += struct.pack("<Q", dim)
        payload += arr.astype("<f8").tobytes()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(payload))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> dict:
    """Read a checkpoint back into an ordered ``{name: float64 array}`` dict."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset = 16
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = blob[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        shape = struct.unpack_from("<" + "Q" * ndim, blob, offset)
        offset += 8 * ndim
        n_items = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(blob, dtype="<f8", count=n_items, offset=offset).copy()
        offset += 8 * n_items
        arrays[name] = data.reshape(shape)
    return arrays
