"""Binary tensor interchange format.

Layout (bit-exact, little-endian):

    magic "DOUCTEN1" | u8 dtype (0 = f32) | u8 rank | rank x u32 dims | payload

The payload is the raw row-major float32 values.  Ranks 1 through 4 are
supported; writes are atomic (temp file + rename) so a concurrent reader
never sees a half-written tensor.
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    PayloadMismatchError,
    TensorFileError,
    UnsupportedDtypeError,
)

MAGIC = b"DOUCTEN1"
DTYPE_F32 = 0
_MAX_RANK = 4


def write_tensor(path, values) -> None:
    """Write ``values`` (rank 1-4, cast to float32) atomically to ``path``."""
    arr = np.asarray(values, dtype=np.float32)
    if not 1 <= arr.ndim <= _MAX_RANK:
        raise TensorFileError(f"write_tensor: rank {arr.ndim} outside supported 1..{_MAX_RANK}")
    arr = np.ascontiguousarray(arr)
    path = Path(path)
    header = MAGIC + struct.pack("<BB", DTYPE_F32, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    payload = arr.astype("<f4").tobytes(order="C")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(header)
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_header(f, path) -> tuple[int, ...]:
    magic = f.read(len(MAGIC))
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    head = f.read(2)
    if len(head) != 2:
        raise TensorFileError(f"{path}: truncated header")
    dtype, rank = struct.unpack("<BB", head)
    if dtype != DTYPE_F32:
        raise UnsupportedDtypeError(f"{path}: unsupported dtype tag {dtype}")
    if not 1 <= rank <= _MAX_RANK:
        raise TensorFileError(f"{path}: rank {rank} outside supported 1..{_MAX_RANK}")
    dims = f.read(4 * rank)
    if len(dims) != 4 * rank:
        raise TensorFileError(f"{path}: truncated shape header")
    return struct.unpack(f"<{rank}I", dims)


def read_tensor_shape(path) -> tuple[int, ...]:
    """Read only the declared shape of a tensor file (cheap validation)."""
    with open(path, "rb") as f:
        return _read_header(f, path)


def read_tensor(path) -> np.ndarray:
    """Read a tensor file back as a float32 array of its stored rank."""
    with open(path, "rb") as f:
        shape = _read_header(f, path)
        expected = 4 * int(np.prod(shape, dtype=np.int64))
        payload = f.read()
    if len(payload) != expected:
        raise PayloadMismatchError(
            f"{path}: payload is {len(payload)} bytes, shape {shape} needs {expected}"
        )
    arr = np.frombuffer(payload, dtype="<f4").astype(np.float32, copy=False)
    return arr.reshape(shape).copy()
