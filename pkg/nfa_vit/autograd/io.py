"""
io.py
-----
NFAT binary tensor files: magic "NFAT", u8 rank, rank x u32 little-endian
dims, then the float32 little-endian payload in row-major order.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import TensorFileError

MAGIC = b"NFAT"


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array, dtype="<f4")
    if array.ndim > 255:
        raise TensorFileError(f"rank {array.ndim} does not fit in a u8")
    header = MAGIC + struct.pack("<B", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array).tobytes()


def decode_tensor(blob: bytes) -> np.ndarray:
    if len(blob) < 5 or blob[:4] != MAGIC:
        raise TensorFileError("missing NFAT magic")
    rank = blob[4]
    offset = 5 + 4 * rank
    if len(blob) < offset:
        raise TensorFileError(f"truncated header for rank {rank}")
    dims = struct.unpack(f"<{rank}I", blob[5:offset])
    count = int(np.prod(dims)) if rank else 1
    payload = blob[offset:]
    if len(payload) != 4 * count:
        raise TensorFileError(f"payload has {len(payload)} bytes, expected {4 * count} for shape {dims}")
    return np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(dims)


def write_tensor(path: str, array: np.ndarray) -> None:
    """Write `array` to `path`, creating parent directories."""
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_tensor(array))


def read_tensor(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    try:
        return decode_tensor(blob)
    except TensorFileError as e:
        raise TensorFileError(f"{path}: {e}") from None
