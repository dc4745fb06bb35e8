"""Writer/reader for the pipeline's ALPT tensor container.

This mirrors the consumer side's documented wire format (the coupling
between exporter and pipeline is this file format, not code): magic
"ALPT", u16 version, u8 dtype code (1=float32, 2=uint8, 3=uint16),
u8 rank, rank x u64 dims, then row-major payload; everything
little-endian.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ALPT"
VERSION = 1

_CODE_TO_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<u1"), 3: np.dtype("<u2")}
_KIND_TO_CODE = {"f4": 1, "u1": 2, "u2": 3}


def write_tensor(t: np.ndarray, path: str | Path) -> None:
    arr = np.ascontiguousarray(t)
    key = f"{arr.dtype.kind}{arr.dtype.itemsize}"
    if key not in _KIND_TO_CODE:
        raise ValueError(f"cannot serialize dtype {arr.dtype}")
    if arr.ndim < 1 or any(d < 1 for d in arr.shape):
        raise ValueError(f"invalid shape {arr.shape}")
    code = _KIND_TO_CODE[key]
    header = MAGIC + struct.pack("<HBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.astype(_CODE_TO_DTYPE[code], copy=False).tobytes(order="C"))


def read_tensor(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an ALPT tensor file")
    version, code, rank = struct.unpack("<HBB", raw[4:8])
    if version != VERSION or code not in _CODE_TO_DTYPE or rank < 1:
        raise ValueError(f"{path}: unsupported header")
    dims_end = 8 + 8 * rank
    dims = struct.unpack(f"<{rank}Q", raw[8:dims_end])
    dtype = _CODE_TO_DTYPE[code]
    count = int(np.prod(dims))
    if len(raw) - dims_end < count * dtype.itemsize:
        raise ValueError(f"{path}: truncated payload")
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=dims_end)
    return flat.reshape(dims).astype(dtype.newbyteorder("="), copy=True)
