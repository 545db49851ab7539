"""Binary tensor (FPT1) and mask (PGM P5) file formats.

FPT1 layout, all little-endian::

    b"FPT1" | uint32 ndim | uint32 extent * ndim | float32 payload (row-major)
"""
from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"FPT1"
_HEADER = struct.Struct("<4sI")


def write_tensor(tensor, path):
    """Write an array as an FPT1 tensor.

    Values are stored as float32; non-finite values are refused so that every
    file on disk satisfies the load-time invariant.
    """
    arr = np.asarray(tensor)
    if arr.ndim == 0:
        raise ValueError("cannot write a 0-d tensor")
    if any(d <= 0 for d in arr.shape):
        raise ValueError(f"tensor extents must be positive, got {arr.shape}")
    data = np.ascontiguousarray(arr, dtype="<f4")
    bad = np.flatnonzero(~np.isfinite(data.ravel()))
    if bad.size:
        raise ValueError(
            f"refusing to write non-finite value at element {int(bad[0])}"
        )
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(data.tobytes())


def read_tensor(path):
    """Read an FPT1 tensor into a float32 array.

    Raises:
        FormatError: bad magic, truncated header or payload, trailing bytes
            or non-finite values. The message names the byte offset.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    return decode_tensor(raw, source=os.fspath(path))


def decode_tensor(raw, source="<bytes>"):
    if len(raw) < _HEADER.size:
        raise FormatError(f"{source}: truncated header at byte offset {len(raw)}")
    magic, ndim = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r} at byte offset 0")
    if ndim == 0:
        raise FormatError(f"{source}: ndim must be positive (byte offset 4)")
    offset = _HEADER.size
    need = offset + 4 * ndim
    if len(raw) < need:
        raise FormatError(
            f"{source}: truncated header at byte offset {len(raw)}, "
            f"expected {ndim} extents"
        )
    dims = struct.unpack_from(f"<{ndim}I", raw, offset)
    for k, d in enumerate(dims):
        if d == 0:
            raise FormatError(
                f"{source}: zero extent at byte offset {offset + 4 * k}"
            )
    offset = need
    count = int(np.prod(dims, dtype=np.int64))
    end = offset + 4 * count
    if len(raw) < end:
        raise FormatError(
            f"{source}: truncated payload at byte offset {len(raw)}, "
            f"expected {end} bytes"
        )
    if len(raw) > end:
        raise FormatError(f"{source}: trailing data at byte offset {end}")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        raise FormatError(
            f"{source}: non-finite value at byte offset {offset + 4 * int(bad[0])}"
        )
    return data.astype(np.float32).reshape(dims)


def _pgm_tokens(raw, count):
    """Parse ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    pos = 0
    n = len(raw)
    while len(tokens) < count:
        while pos < n and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < n and raw[pos:pos + 1] == b"#":
            while pos < n and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(raw[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_mask_pgm(path):
    """Read a binary P5 PGM as a 0/1 uint8 mask (pixels > 127 are buildings)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, start = _pgm_tokens(raw, 4)
    if tokens[0] != b"P5":
        raise FormatError(f"{os.fspath(path)}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"{os.fspath(path)}: malformed PGM header") from exc
    if maxval != 255:
        raise FormatError(f"{os.fspath(path)}: maxval must be 255, got {maxval}")
    if width <= 0 or height <= 0:
        raise FormatError(f"{os.fspath(path)}: nonpositive image size")
    pixels = raw[start:start + width * height]
    if len(pixels) != width * height:
        raise FormatError(
            f"{os.fspath(path)}: truncated raster at byte offset {start + len(pixels)}"
        )
    img = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)
    return (img > 127).astype(np.uint8)


def write_mask_pgm(mask, path):
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask values must be 0 or 1")
    height, width = mask.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write((mask.astype(np.uint8) * 255).tobytes())
