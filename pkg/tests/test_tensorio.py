"""Tests for FFDT tensor files."""

import io
import struct

import numpy as np
import pytest

from ffdconv.exceptions import DataError
from ffdconv.tensor import Tensor
from ffdconv.tensorio import (
    decode_tensor,
    encode_tensor,
    read_named_tensors,
    read_tensor,
    write_named_tensors,
    write_tensor,
)


class TestEncode:
    """Tests for the byte layout."""

    def test_header(self):
        """Test magic, dtype code, rank and little-endian dims lead the payload."""
        data = encode_tensor(np.zeros((2, 3), dtype=np.float32))

        assert data[:4] == b"FFDT"
        assert data[4:6] == bytes([0, 2])
        assert struct.unpack_from("<2Q", data, 6) == (2, 3)
        assert len(data) == 6 + 16 + 6 * 4

    def test_float64_code(self):
        """Test float64 uses dtype code 1."""
        assert encode_tensor(Tensor(np.ones(1)))[4] == 1

    def test_unsupported_dtype(self):
        """Test integer arrays cannot be stored."""
        with pytest.raises(DataError, match="cannot store dtype"):
            encode_tensor(np.zeros(2, dtype=np.int32))


class TestDecode:
    """Tests for decode_tensor errors and offsets."""

    def test_offset_advances(self):
        """Test two concatenated tensors decode one after the other."""
        data = encode_tensor(np.arange(3.0)) + encode_tensor(np.ones((1, 2), dtype=np.float32))

        first, offset = decode_tensor(data)
        second, end = decode_tensor(data, offset)

        np.testing.assert_array_equal(first, [0.0, 1.0, 2.0])
        assert second.dtype == np.float32 and second.shape == (1, 2)
        assert end == len(data)

    def test_scalar(self):
        """Test a rank-0 tensor holds one value."""
        array, _ = decode_tensor(encode_tensor(np.array(2.5)))

        assert array.shape == () and float(array) == 2.5

    def test_bad_magic(self):
        """Test a wrong magic is refused."""
        with pytest.raises(DataError, match="bad tensor magic"):
            decode_tensor(b"NOPE" + bytes(10))

    def test_unknown_dtype_code(self):
        """Test a dtype code other than 0 or 1 is refused."""
        with pytest.raises(DataError, match="unknown dtype code 7"):
            decode_tensor(b"FFDT" + bytes([7, 0]))

    def test_truncated_dims(self):
        """Test a header cut inside the dims is reported."""
        with pytest.raises(DataError, match="truncated tensor dims"):
            decode_tensor(encode_tensor(np.zeros((2, 2)))[:10])

    def test_truncated_payload(self):
        """Test a payload shorter than the dims imply is reported."""
        with pytest.raises(DataError, match="truncated tensor payload"):
            decode_tensor(encode_tensor(np.zeros((2, 2)))[:-1])


class TestFiles:
    """Tests for single-tensor files and named tables."""

    def test_read_back(self, tmp_path):
        """Test a written file reads back as a Tensor."""
        path = tmp_path / "x.ffdt"
        write_tensor(path, np.arange(6, dtype=np.float32).reshape(2, 3))

        loaded = read_tensor(path)

        assert isinstance(loaded, Tensor)
        np.testing.assert_array_equal(loaded.numpy(), np.arange(6).reshape(2, 3))

    def test_trailing_bytes(self, tmp_path):
        """Test extra bytes after the tensor are refused."""
        path = tmp_path / "x.ffdt"
        path.write_bytes(encode_tensor(np.zeros(2)) + b"\x00")

        with pytest.raises(DataError, match="1 trailing bytes"):
            read_tensor(path)

    def test_missing(self, tmp_path):
        """Test a missing file is a data error."""
        with pytest.raises(DataError, match="not found"):
            read_tensor(tmp_path / "absent.ffdt")

    def test_named_table(self):
        """Test names and order survive a named-tensor table."""
        stream = io.BytesIO()
        write_named_tensors(stream, {"block0.w": np.ones(2), "gru.h": np.zeros((1, 1))})

        tensors, end = read_named_tensors(stream.getvalue(), 0)

        assert list(tensors) == ["block0.w", "gru.h"]
        assert end == len(stream.getvalue())

    def test_truncated_table(self):
        """Test a table cut before its count is reported."""
        with pytest.raises(DataError, match="truncated tensor table"):
            read_named_tensors(b"\x01\x00", 0)
