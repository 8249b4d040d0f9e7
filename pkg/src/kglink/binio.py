"""Binary file helpers shared by checkpoints and the retrieval index.

Conventions: little-endian integers, f32 row-major matrices, UTF-8 string
blocks prefixed with their byte length.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np


class FormatError(ValueError):
    pass


def write_u32(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<I", value))


def write_u64(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<Q", value))


def read_u32(fh: BinaryIO) -> int:
    return struct.unpack("<I", _read_exact(fh, 4))[0]


def read_u64(fh: BinaryIO) -> int:
    return struct.unpack("<Q", _read_exact(fh, 8))[0]


def write_f64(fh: BinaryIO, value: float) -> None:
    fh.write(struct.pack("<d", value))


def read_f64(fh: BinaryIO) -> float:
    return struct.unpack("<d", _read_exact(fh, 8))[0]


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(data)}")
    return data


def write_magic(fh: BinaryIO, magic: bytes) -> None:
    assert len(magic) == 8
    fh.write(magic)


def read_magic(fh: BinaryIO, expected: bytes) -> None:
    got = _read_exact(fh, 8)
    if got != expected:
        raise FormatError(f"bad magic {got!r}, expected {expected!r}")


def write_str_block(fh: BinaryIO, text: str) -> None:
    data = text.encode("utf-8")
    write_u32(fh, len(data))
    fh.write(data)


def read_str_block(fh: BinaryIO) -> str:
    return _read_exact(fh, read_u32(fh)).decode("utf-8")


def write_bytes_block(fh: BinaryIO, data: bytes) -> None:
    write_u32(fh, len(data))
    fh.write(data)


def read_bytes_block(fh: BinaryIO) -> bytes:
    return _read_exact(fh, read_u32(fh))


def write_matrix(fh: BinaryIO, matrix: np.ndarray) -> None:
    """f32 little-endian, row-major; shape is the caller's bookkeeping."""
    fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def read_matrix(fh: BinaryIO, rows: int, cols: int) -> np.ndarray:
    data = _read_exact(fh, rows * cols * 4)
    return np.frombuffer(data, dtype="<f4").reshape(rows, cols).astype(np.float64)
