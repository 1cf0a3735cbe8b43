import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from dancegen.container import read_manifest, read_tensor, write_manifest, write_tensor
from dancegen.errors import FileFormatError


def test_known_byte_layout(tmp_path):
    path = tmp_path / "t.p2dt"
    write_tensor(path, np.array([[1.0, 2.0]], dtype=np.float32))
    raw = path.read_bytes()
    assert raw[:4] == b"P2DT"
    version, rank = struct.unpack("<II", raw[4:12])
    assert (version, rank) == (1, 2)
    assert struct.unpack("<2Q", raw[12:28]) == (1, 2)
    assert np.frombuffer(raw[28:], dtype="<f4").tolist() == [1.0, 2.0]


@settings(deadline=None, max_examples=50)
@given(
    arrays(
        dtype=np.float32,
        shape=array_shapes(min_dims=1, max_dims=4, min_side=1, max_side=5),
        elements=st.floats(-1e6, 1e6, width=32),
    )
)
def test_tensor_roundtrip(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("p2dt") / "t.p2dt"
    write_tensor(path, arr)
    back = read_tensor(path)
    assert back.shape == arr.shape
    assert back.dtype == np.float32
    assert np.array_equal(back, arr)


def test_zero_dim_tensor_roundtrip(tmp_path):
    path = tmp_path / "t.p2dt"
    write_tensor(path, np.zeros((3, 0, 2), dtype=np.float32))
    assert read_tensor(path).shape == (3, 0, 2)


def test_float64_input_is_stored_as_float32(tmp_path):
    path = tmp_path / "t.p2dt"
    write_tensor(path, np.array([0.1], dtype=np.float64))
    assert read_tensor(path)[0] == np.float32(0.1)


def test_bad_magic(tmp_path):
    path = tmp_path / "t.p2dt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FileFormatError, match="magic"):
        read_tensor(path)


def test_unsupported_version(tmp_path):
    path = tmp_path / "t.p2dt"
    path.write_bytes(b"P2DT" + struct.pack("<II", 9, 1) + struct.pack("<Q", 0))
    with pytest.raises(FileFormatError, match="version"):
        read_tensor(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.p2dt"
    write_tensor(path, np.ones(4, dtype=np.float32))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(FileFormatError, match="truncated payload"):
        read_tensor(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "t.p2dt"
    write_tensor(path, np.ones(2, dtype=np.float32))
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FileFormatError, match="trailing"):
        read_tensor(path)


def test_implausible_rank_rejected(tmp_path):
    path = tmp_path / "t.p2dt"
    path.write_bytes(b"P2DT" + struct.pack("<II", 1, 99))
    with pytest.raises(FileFormatError, match="rank"):
        read_tensor(path)


def test_manifest_roundtrip_and_sorting(tmp_path):
    path = tmp_path / "manifest.txt"
    write_manifest(path, {"b": "2", "a": "x=y", "c": ""})
    assert path.read_text() == "a=x=y\nb=2\nc=\n"
    back = read_manifest(path)
    assert back == {"a": "x=y", "b": "2", "c": ""}


def test_manifest_rejects_bare_lines(tmp_path):
    path = tmp_path / "manifest.txt"
    path.write_text("ok=1\nnot a pair\n")
    with pytest.raises(FileFormatError, match=":2:"):
        read_manifest(path)


def test_manifest_skips_blank_lines(tmp_path):
    path = tmp_path / "manifest.txt"
    path.write_text("a=1\n\nb=2\n")
    assert read_manifest(path) == {"a": "1", "b": "2"}
