"""Writer/reader for the engine's tensor interchange format.

Independent implementation (struct-level); the byte layout is the contract:

    magic "DOUCTEN1" | u8 dtype (0 = f32) | u8 rank (1..4) | rank x u32 dims | payload

Little-endian, row-major float32 payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"DOUCTEN1"


def save_tensor(path, values) -> None:
    arr = np.asarray(values, dtype=np.float32)
    if not 1 <= arr.ndim <= 4:
        raise ValueError(f"rank {arr.ndim} outside supported range 1..4")
    arr = np.ascontiguousarray(arr)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<BB", 0, arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.astype("<f4").tobytes(order="C"))


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise ValueError(f"{path}: bad magic")
        dtype, rank = struct.unpack("<BB", f.read(2))
        if dtype != 0:
            raise ValueError(f"{path}: unsupported dtype {dtype}")
        shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
        payload = f.read()
    expected = 4 * int(np.prod(shape, dtype=np.int64))
    if len(payload) != expected:
        raise ValueError(f"{path}: payload {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
