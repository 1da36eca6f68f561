"""FFDT binary tensor files.

Layout: magic "FFDT", u8 dtype code (0=f32, 1=f64), u8 ndim, ndim
little-endian u64 dims, then the row-major little-endian payload.
"""

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .config import DTYPE_CODES, TENSOR_MAGIC
from .exceptions import DataError
from .tensor import Tensor

_CODE_TO_DTYPE = {code: np.dtype(name).newbyteorder("<") for name, code in DTYPE_CODES.items()}


def encode_tensor(value: Tensor | np.ndarray) -> bytes:
    """Serialize one tensor to FFDT bytes."""
    array = value.data if isinstance(value, Tensor) else np.asarray(value)
    code = DTYPE_CODES.get(array.dtype.name)
    if code is None:
        raise DataError(f"cannot store dtype {array.dtype} (expected float32 or float64)")
    if array.ndim > 255:
        raise DataError(f"too many dimensions: {array.ndim}")
    header = TENSOR_MAGIC + struct.pack("<BB", code, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array, dtype=_CODE_TO_DTYPE[code]).tobytes()
    return header + payload


def decode_tensor(buffer: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Parse one FFDT tensor starting at `offset`; return (array, next offset)."""
    if buffer[offset : offset + 4] != TENSOR_MAGIC:
        raise DataError(f"bad tensor magic at byte {offset}")
    if len(buffer) < offset + 6:
        raise DataError("truncated tensor header")
    code, ndim = struct.unpack_from("<BB", buffer, offset + 4)
    dtype = _CODE_TO_DTYPE.get(code)
    if dtype is None:
        raise DataError(f"unknown dtype code {code}")
    offset += 6
    if len(buffer) < offset + 8 * ndim:
        raise DataError("truncated tensor dims")
    shape = struct.unpack_from(f"<{ndim}Q", buffer, offset)
    offset += 8 * ndim
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    nbytes = count * dtype.itemsize
    if len(buffer) < offset + nbytes:
        raise DataError(f"truncated tensor payload: need {nbytes} bytes")
    array = np.frombuffer(buffer, dtype=dtype, count=count, offset=offset).reshape(shape)
    return array.astype(dtype.newbyteorder("="), copy=True), offset + nbytes


def write_tensor(path: Path, value: Tensor | np.ndarray) -> None:
    """Write a single tensor file."""
    Path(path).write_bytes(encode_tensor(value))


def read_tensor(path: Path) -> Tensor:
    """Read a single tensor file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"tensor file not found: {path}")
    data = path.read_bytes()
    array, end = decode_tensor(data)
    if end != len(data):
        raise DataError(f"{path}: {len(data) - end} trailing bytes after tensor")
    return Tensor(array)


def write_named_tensors(stream: BinaryIO, tensors: dict[str, np.ndarray]) -> None:
    """Write a u32 count then (u16 name length, UTF-8 name, FFDT tensor) records."""
    stream.write(struct.pack("<I", len(tensors)))
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        stream.write(struct.pack("<H", len(encoded)))
        stream.write(encoded)
        stream.write(encode_tensor(array))


def read_named_tensors(buffer: bytes, offset: int) -> tuple[dict[str, np.ndarray], int]:
    """Inverse of `write_named_tensors`."""
    if len(buffer) < offset + 4:
        raise DataError("truncated tensor table")
    (count,) = struct.unpack_from("<I", buffer, offset)
    offset += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        if len(buffer) < offset + 2:
            raise DataError("truncated tensor name")
        (length,) = struct.unpack_from("<H", buffer, offset)
        offset += 2
        name = buffer[offset : offset + length].decode("utf-8")
        offset += length
        tensors[name], offset = decode_tensor(buffer, offset)
    return tensors, offset
