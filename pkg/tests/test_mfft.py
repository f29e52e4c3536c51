import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from mffnet import mfft


def test_layout_is_exact():
    arr = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], dtype=np.float32)
    blob = mfft.encode_tensor(arr)
    assert blob[:4] == b"MFFT"
    assert blob[4:7] == bytes([1, 1, 2])
    assert struct.unpack("<2I", blob[7:15]) == (2, 3)
    assert blob[15:] == np.array([1, 2, 3, 4, 5, 6], dtype="<f4").tobytes()
    assert len(blob) == 15 + 6 * 4


def test_float64_code_and_scalar():
    blob = mfft.encode_tensor(np.float64(2.5))
    assert blob[4:7] == bytes([1, 2, 0])
    assert mfft.decode_tensor(blob) == 2.5


@settings(max_examples=80, deadline=None)
@given(st.sampled_from([np.float32, np.float64]).flatmap(
    lambda dt: arrays(dt, array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=5))))
def test_round_trip_is_byte_exact(arr):
    blob = mfft.encode_tensor(arr)
    back = mfft.decode_tensor(blob)
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == np.ascontiguousarray(arr).tobytes()
    assert mfft.encode_tensor(back) == blob


def test_big_endian_input_is_written_little_endian():
    arr = np.arange(4, dtype=">f8")
    assert mfft.encode_tensor(arr) == mfft.encode_tensor(arr.astype("<f8"))


def test_file_round_trip(tmp_path):
    arr = np.random.default_rng(0).standard_normal((3, 2))
    mfft.save_tensor(tmp_path / "x.mfft", arr)
    np.testing.assert_array_equal(mfft.load_tensor(tmp_path / "x.mfft"), arr)


@pytest.mark.parametrize("blob,match", [
    (b"NOPE\x01\x02\x00" + bytes(8), "magic"),
    (b"MFFT\x02\x02\x00" + bytes(8), "version"),
    (b"MFFT\x01\x07\x00" + bytes(8), "dtype"),
    (b"MFFT\x01\x02\x01\x05\x00\x00\x00" + bytes(8), "truncated"),
    (b"MFFT\x01\x02\x00" + bytes(9), "trailing"),
])
def test_malformed_input(blob, match):
    with pytest.raises(mfft.FormatError, match=match):
        mfft.decode_tensor(blob)


def test_rejects_integer_arrays():
    with pytest.raises(mfft.FormatError):
        mfft.encode_tensor(np.arange(3))


def test_container_round_trip():
    entries = {"b": np.ones((2, 2)), "a": np.zeros(3, dtype=np.float32)}
    blob = mfft.encode_container({"k": 1}, entries)
    assert blob[:4] == b"MFFC"
    header, back = mfft.decode_container(blob)
    assert header["k"] == 1 and header["entries"] == ["b", "a"]
    assert list(back) == ["b", "a"]
    assert mfft.encode_container({"k": 1}, back) == blob
    with pytest.raises(mfft.FormatError):
        mfft.decode_container(blob + b"x")
    with pytest.raises(mfft.FormatError):
        mfft.decode_container(b"MFFT" + blob[4:])


def test_read_tensor_streams_consecutive_blobs():
    stream = io.BytesIO(mfft.encode_tensor(np.ones(2)) + mfft.encode_tensor(np.zeros(1)))
    np.testing.assert_array_equal(mfft.read_tensor(stream), [1, 1])
    np.testing.assert_array_equal(mfft.read_tensor(stream), [0])
