"""Binary PGM (P5) image and label I/O.

Intensity images travel through the toolkit as [0, 1] floats and are stored
as 8-bit or 16-bit P5 files: a text header (magic, width, height, maxval)
followed by big-endian raster bytes.  Comment lines starting with ``#`` are
allowed between header tokens.  Label maps reuse the container with raw
integer values and no rescaling.  The ASCII variant (P2) is deliberately
rejected so every file round-trips byte for byte.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError, PgmParseError


def _read_token(data: bytes, pos: int):
    """Next whitespace-delimited header token, skipping # comments."""
    n = len(data)
    while pos < n:
        c = data[pos:pos + 1]
        if c == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise PgmParseError("unexpected end of header", offset=pos)
    start = pos
    while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
        pos += 1
    return data[start:pos], pos


def _load_raw(path):
    """Decode a P5 file into ((H, W) uint8/uint16 array, maxval)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"P2":
        raise PgmParseError("ASCII (P2) files are not supported, use binary P5", offset=0)
    if data[:2] != b"P5":
        raise PgmParseError(f"bad magic {data[:2]!r}, expected b'P5'", offset=0)
    pos = 2
    fields = []
    for what in ("width", "height", "maxval"):
        token, pos = _read_token(data, pos)
        try:
            value = int(token)
        except ValueError:
            raise PgmParseError(f"non-numeric {what} {token!r}", offset=pos - len(token)) from None
        if value <= 0:
            raise PgmParseError(f"{what} must be positive, got {value}", offset=pos - len(token))
        fields.append(value)
    width, height, maxval = fields
    if maxval > 65535:
        raise PgmParseError(f"maxval {maxval} exceeds 65535", offset=pos)
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PgmParseError("missing whitespace before raster", offset=pos)
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * dtype.itemsize
    raster = data[pos:pos + expected]
    if len(raster) < expected:
        raise PgmParseError(
            f"truncated raster: expected {expected} bytes, found {len(raster)}",
            offset=pos + len(raster),
        )
    img = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return (img.astype(np.uint16) if maxval > 255 else img.copy()), maxval


def load_pgm(path) -> np.ndarray:
    """Read a P5 intensity image as (H, W) float64 in [0, 1]."""
    raw, maxval = _load_raw(path)
    return raw.astype(np.float64) / maxval


def load_labels_pgm(path) -> np.ndarray:
    """Read a P5 label map as (H, W) int64 class indices, unscaled."""
    raw, _ = _load_raw(path)
    return raw.astype(np.int64)


def _write(path, arr, maxval) -> None:
    payload = arr.astype("u1" if maxval <= 255 else ">u2").tobytes()
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + payload)


def save_pgm(path, image: np.ndarray, maxval: int = 255) -> None:
    """Write a [0, 1] float image as binary P5 with ``maxval`` gray levels.

    Quantization is round-to-nearest, so save/load loses at most
    1/(2*maxval) per pixel and a loaded file re-saves byte-identically.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"expected a 2-d image, got shape {arr.shape}")
    if maxval not in (255, 65535):
        raise InvalidInputError(f"maxval must be 255 or 65535, got {maxval}")
    if not np.isfinite(arr).all():
        raise InvalidInputError("image contains non-finite values")
    if arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0:
        raise InvalidInputError(
            f"intensities must lie in [0, 1], got range "
            f"[{arr.min()}, {arr.max()}]"
        )
    _write(path, np.rint(arr * maxval), maxval)


def save_labels_pgm(path, labels: np.ndarray) -> None:
    """Write an integer label map as binary P5, values stored verbatim."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise InvalidInputError(f"expected a 2-d label map, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise InvalidInputError(f"expected integer labels, got dtype {arr.dtype}")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > 65535:
        raise InvalidInputError("label values must fit in uint16")
    _write(path, arr, 255 if arr.max(initial=0) <= 255 else 65535)
