"""Tiny self-describing binary container for float64 arrays.

Layout (all integers little-endian)::

    magic   4 bytes  b"OPTD"
    version u16      currently 1
    dtype   u8       1 = float64 little-endian (the only code defined)
    ndim    u8
    dims    ndim x u64
    payload 8 * prod(dims) bytes, row-major float64

Round trips are bit-exact.  The three ways a file can be unreadable --
wrong magic, unknown version, and a payload shorter than the header
promises -- raise distinct exception types so callers can tell apart
"not ours", "newer tool", and "interrupted write".
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = [
    "MAGIC",
    "VERSION",
    "ArrayFileError",
    "BadMagicError",
    "UnsupportedVersionError",
    "TruncatedFileError",
    "save_array",
    "load_array",
]

MAGIC = b"OPTD"
VERSION = 1
_DTYPE_F64 = 1
_HEADER = struct.Struct("<4sHBB")


class ArrayFileError(Exception):
    """Base for array-container read failures."""

    code = 1


class BadMagicError(ArrayFileError):
    """The file does not start with the container magic."""

    code = 2


class UnsupportedVersionError(ArrayFileError):
    """The container version or dtype code is not one we can read."""

    code = 3


class TruncatedFileError(ArrayFileError):
    """The file ends before the header-declared payload does."""

    code = 4


def save_array(path, array: np.ndarray) -> None:
    """Write ``array`` as float64 in the container format."""
    arr = np.ascontiguousarray(array, dtype="<f8")
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, _DTYPE_F64, arr.ndim))
        fh.write(dims)
        fh.write(arr.tobytes(order="C"))


def load_array(path) -> np.ndarray:
    """Read a container file back into a float64 array, bit-exact."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        if blob[: len(MAGIC)] != MAGIC[: len(blob)] or not blob:
            raise BadMagicError(f"{path}: not an array container")
        raise TruncatedFileError(f"{path}: header cut short at {len(blob)} bytes")
    magic, version, dtype_code, ndim = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    if dtype_code != _DTYPE_F64:
        raise UnsupportedVersionError(f"{path}: unknown dtype code {dtype_code}")
    dims_end = _HEADER.size + 8 * ndim
    if len(blob) < dims_end:
        raise TruncatedFileError(f"{path}: dimension list cut short")
    dims = struct.unpack_from(f"<{ndim}Q", blob, _HEADER.size)
    expected = 8 * int(np.prod(dims, dtype=np.int64))
    payload = blob[dims_end:]
    if len(payload) < expected:
        raise TruncatedFileError(
            f"{path}: payload is {len(payload)} bytes, header promises {expected}"
        )
    if len(payload) > expected:
        raise TruncatedFileError(
            f"{path}: {len(payload) - expected} trailing bytes after payload"
        )
    arr = np.frombuffer(payload, dtype="<f8")
    return arr.reshape(dims).copy()
