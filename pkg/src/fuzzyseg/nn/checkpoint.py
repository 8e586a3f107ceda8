"""Checkpoint container: a text manifest followed by a raw float payload.

Layout::

    FZCKPT 1\n
    meta <key> <value>\n        (zero or more)
    tensor <name> <dtype> <d0,d1,...> <byte offset>\n
    END\n
    <row-major little-endian payload>

Offsets are relative to the byte after the END line.  Saving and loading the
same entries is bit-exact.
"""

from __future__ import annotations

import numpy as np

from ..errors import CheckpointError

_MAGIC = b"FZCKPT 1"
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(path, entries, meta=None):
    """Write named arrays plus string metadata.

    ``entries`` is an iterable of (name, array); order is preserved.  Names
    must not contain whitespace.
    """
    header = [_MAGIC.decode()]
    for key, value in (meta or {}).items():
        header.append(f"meta {key} {value}")
    blobs = []
    offset = 0
    entries = list(entries)
    for name, array in entries:
        if " " in name:
            raise CheckpointError(f"tensor name {name!r} contains whitespace")
        array = np.asarray(array)
        dtype_name = array.dtype.name
        if dtype_name not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype_name} for tensor {name!r}")
        blob = np.ascontiguousarray(array, dtype=_DTYPES[dtype_name]).tobytes()
        shape = ",".join(str(d) for d in array.shape) if array.shape else "-"
        header.append(f"tensor {name} {dtype_name} {shape} {offset}")
        blobs.append(blob)
        offset += len(blob)
    header.append("END")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode())
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Return (entries, meta): a list of (name, array) and a metadata dict."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(_MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    end_marker = raw.find(b"\nEND\n")
    if end_marker < 0:
        raise CheckpointError(f"{path}: missing END marker")
    header = raw[:end_marker].decode().splitlines()[1:]
    payload = raw[end_marker + len(b"\nEND\n"):]

    meta = {}
    specs = []
    for line in header:
        fields = line.split(" ")
        if fields[0] == "meta" and len(fields) >= 3:
            meta[fields[1]] = " ".join(fields[2:])
        elif fields[0] == "tensor" and len(fields) == 5:
            specs.append(fields[1:])
        else:
            raise CheckpointError(f"{path}: malformed header line {line!r}")

    entries = []
    for name, dtype_name, shape_text, offset_text in specs:
        if dtype_name not in _DTYPES:
            raise CheckpointError(f"{path}: unsupported dtype {dtype_name} for {name!r}")
        shape = () if shape_text == "-" else tuple(int(d) for d in shape_text.split(","))
        count = int(np.prod(shape)) if shape else 1
        offset = int(offset_text)
        nbytes = count * np.dtype(_DTYPES[dtype_name]).itemsize
        chunk = payload[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated payload for tensor {name!r}")
        array = np.frombuffer(chunk, dtype=_DTYPES[dtype_name]).reshape(shape)
        entries.append((name, array.astype(dtype_name, copy=True)))
    return entries, meta
