"""Minimal portable container for a single float array.

Used for cached membership maps that accompany each image on disk.  Layout:
two ASCII header lines (magic + version, then dtype and comma-separated
shape) followed by the raw little-endian payload.  Endianness is pinned so
files written on any host read back bit-identically.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError

_MAGIC = b"FZTENSOR 1\n"
_DTYPES = {"f4": "<f4", "f8": "<f8"}


def save_array(path, array: np.ndarray) -> None:
    arr = np.asarray(array)  # not ascontiguousarray: that would promote 0-d to 1-d
    if arr.dtype == np.float32:
        code = "f4"
    elif arr.dtype == np.float64:
        code = "f8"
    else:
        raise InvalidInputError(f"only float32/float64 arrays are supported, got {arr.dtype}")
    shape = ",".join(str(d) for d in arr.shape) or "-"
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(f"{code} {shape}\n".encode("ascii"))
        fh.write(arr.astype(_DTYPES[code]).tobytes())


def load_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != _MAGIC:
            raise InvalidInputError(f"{path}: bad magic {magic!r}")
        header = fh.readline().decode("ascii", errors="replace").split()
        if len(header) != 2 or header[0] not in _DTYPES:
            raise InvalidInputError(f"{path}: malformed header {header!r}")
        code, shape_text = header
        shape = () if shape_text == "-" else tuple(int(d) for d in shape_text.split(","))
        dtype = np.dtype(_DTYPES[code])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = fh.read()
    if len(payload) != count * dtype.itemsize:
        raise InvalidInputError(
            f"{path}: payload has {len(payload)} bytes, expected {count * dtype.itemsize}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.base, copy=True)
