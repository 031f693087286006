"""Reader and writer for the BPMV / BPMA binary array containers.

Layout (little-endian)::

    magic (4 bytes) | u8 rank | rank x u32 extents | payload in row-major order

``BPMV`` carries float32 values, ``BPMA`` carries int32 atlas labels.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from ..errors import (
    BadMagicError,
    ExtentOverflowError,
    RankMismatchError,
    TrailingDataError,
    TruncatedPayloadError,
)

MAGIC_VALUES = b"BPMV"
MAGIC_ATLAS = b"BPMA"
MAX_RANK = 8
MAX_ELEMENTS = 1 << 31

_DTYPES = {MAGIC_VALUES: np.dtype("<f4"), MAGIC_ATLAS: np.dtype("<i4")}


def encode(array: np.ndarray, magic: bytes = MAGIC_VALUES) -> bytes:
    arr = np.asarray(array)
    if arr.ndim < 1 or arr.ndim > MAX_RANK:
        raise RankMismatchError(f"rank must be in [1, {MAX_RANK}], got {arr.ndim}")
    if arr.size >= MAX_ELEMENTS or 0 in arr.shape:
        raise ExtentOverflowError(f"unsupported extents {arr.shape}")
    header = magic + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[magic]).tobytes()


def decode(blob: bytes, magic: bytes = MAGIC_VALUES, rank: int | None = None) -> np.ndarray:
    """Parse a container; every malformed input raises a :class:`ParseError` subclass."""
    if len(blob) < 5:
        if blob[:4] != magic[: len(blob[:4])]:
            raise BadMagicError(f"expected magic {magic!r}")
        raise TruncatedPayloadError(f"header truncated at {len(blob)} bytes")
    if blob[:4] != magic:
        raise BadMagicError(f"expected magic {magic!r}, found {blob[:4]!r}")
    ndim = blob[4]
    if ndim < 1 or ndim > MAX_RANK:
        raise RankMismatchError(f"rank {ndim} outside [1, {MAX_RANK}]")
    if rank is not None and ndim != rank:
        raise RankMismatchError(f"expected rank {rank}, file has rank {ndim}")
    end = 5 + 4 * ndim
    if len(blob) < end:
        raise TruncatedPayloadError("extent table truncated")
    shape = struct.unpack(f"<{ndim}I", blob[5:end])
    count = 1
    for extent in shape:
        if extent == 0:
            raise ExtentOverflowError(f"zero extent in {shape}")
        count *= extent
        if count >= MAX_ELEMENTS:
            raise ExtentOverflowError(f"extents {shape} exceed {MAX_ELEMENTS} elements")
    dtype = _DTYPES[magic]
    need = count * dtype.itemsize
    have = len(blob) - end
    if have < need:
        raise TruncatedPayloadError(f"payload has {have} bytes, extents {shape} need {need}")
    if have > need:
        raise TrailingDataError(f"{have - need} unexpected bytes after payload")
    return np.frombuffer(blob, dtype=dtype, count=count, offset=end).reshape(shape).copy()


def write_array(path: str | os.PathLike, array: np.ndarray, magic: bytes = MAGIC_VALUES) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(array, magic))


def read_array(path: str | os.PathLike, magic: bytes = MAGIC_VALUES, rank: int | None = None) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode(fh.read(), magic, rank)


def peek_rank(path: str | os.PathLike) -> int:
    with open(path, "rb") as fh:
        head = fh.read(5)
    if head[:4] not in _DTYPES:
        raise BadMagicError(f"{path}: unknown magic {head[:4]!r}")
    if len(head) < 5:
        raise TruncatedPayloadError(f"{path}: header truncated")
    return head[4]
