"""Low-level helpers for the little-endian binary artifact formats."""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import BadMagic, TruncatedFile, VersionUnsupported

MAGIC_FEATURES = b"L2GF"
MAGIC_GLOBALS = b"L2GG"
MAGIC_INDEX = b"L2GI"
MAGIC_SPARSE = b"L2GD"
MAGIC_SIMILARITY = b"L2GS"

FORMAT_VERSION = 1


def read_exact(f: BinaryIO, size: int) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise TruncatedFile(f"expected {size} bytes, got {len(data)}")
    return data


def read_u32(f: BinaryIO) -> int:
    return struct.unpack("<I", read_exact(f, 4))[0]


def write_u32(f: BinaryIO, value: int) -> None:
    f.write(struct.pack("<I", value))


def read_f32(f: BinaryIO) -> float:
    return struct.unpack("<f", read_exact(f, 4))[0]


def write_f32(f: BinaryIO, value: float) -> None:
    f.write(struct.pack("<f", value))


def read_f32_array(f: BinaryIO, count: int) -> np.ndarray:
    return np.frombuffer(read_exact(f, 4 * count), dtype="<f4").copy()


def write_f32_array(f: BinaryIO, values: np.ndarray) -> None:
    f.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_u32_array(f: BinaryIO, count: int) -> np.ndarray:
    return np.frombuffer(read_exact(f, 4 * count), dtype="<u4").copy()


def write_u32_array(f: BinaryIO, values: np.ndarray) -> None:
    f.write(np.ascontiguousarray(values, dtype="<u4").tobytes())


def expect_magic(f: BinaryIO, magic: bytes) -> None:
    got = f.read(len(magic))
    if got != magic:
        raise BadMagic(f"expected magic {magic!r}, got {got!r}")


def expect_version(f: BinaryIO, supported: int = FORMAT_VERSION) -> int:
    version = read_u32(f)
    if version != supported:
        raise VersionUnsupported(f"format version {version} not supported")
    return version


def read_string(f: BinaryIO) -> str:
    length = read_u32(f)
    return read_exact(f, length).decode("utf-8")


def write_string(f: BinaryIO, value: str) -> None:
    encoded = value.encode("utf-8")
    write_u32(f, len(encoded))
    f.write(encoded)
