import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from polfuse import container as C


def test_roundtrip_bit_exact(tmp_path, rng):
    x = rng.normal(size=(9, 5, 7))
    C.write_raster(tmp_path / "a.pfc3", x, {"k": [1, 2]})
    y, meta = C.read_raster(tmp_path / "a.pfc3")
    assert y.dtype == np.float64
    assert y.tobytes() == x.tobytes()
    assert meta == {"k": [1, 2]}


def test_float32_roundtrip(tmp_path, rng):
    x = rng.normal(size=(3, 4, 4)).astype(np.float32)
    C.write_raster(tmp_path / "a.pfc3", x)
    y, meta = C.read_raster(tmp_path / "a.pfc3")
    assert y.dtype == np.float32 and meta == {}
    assert y.tobytes() == x.tobytes()


def test_header_layout(tmp_path):
    C.write_raster(tmp_path / "a.pfc3", np.zeros((1, 3, 2), dtype=np.float32), {"a": 1})
    raw = (tmp_path / "a.pfc3").read_bytes()
    meta = b'{"a": 1}'
    assert raw[:4] == b"PFC3"
    assert struct.unpack("<H", raw[4:6]) == (1,)
    assert raw[6] == 0 and raw[7] == 1
    assert struct.unpack("<III", raw[8:20]) == (3, 2, len(meta))
    assert raw[20:20 + len(meta)] == meta
    assert len(raw) == 20 + len(meta) + 3 * 2 * 4


def test_planar_row_major_order(tmp_path):
    x = np.arange(2 * 3 * 3, dtype=np.float64).reshape(2, 3, 3)[:1]
    C.write_raster(tmp_path / "a.pfc3", x)
    raw = (tmp_path / "a.pfc3").read_bytes()
    meta_len = struct.unpack("<I", raw[16:20])[0]
    np.testing.assert_array_equal(np.frombuffer(raw[20 + meta_len:], "<f8"), np.arange(9))


def test_two_dimensional_input_is_one_channel(tmp_path):
    C.write_raster(tmp_path / "a.pfc3", np.ones((3, 4)))
    assert C.read_raster(tmp_path / "a.pfc3")[0].shape == (1, 3, 4)


def test_bad_magic(tmp_path):
    p = tmp_path / "a.pfc3"
    C.write_raster(p, np.ones((1, 2, 2)))
    raw = bytearray(p.read_bytes())
    raw[0:4] = b"XXXX"
    p.write_bytes(bytes(raw))
    with pytest.raises(C.BadMagicError):
        C.read_raster(p)


def test_truncated_payload(tmp_path):
    p = tmp_path / "a.pfc3"
    C.write_raster(p, np.ones((9, 4, 4)))
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(C.TruncatedError):
        C.read_raster(p)


def test_truncated_header(tmp_path):
    p = tmp_path / "a.pfc3"
    p.write_bytes(b"PFC3\x01")
    with pytest.raises(C.TruncatedError):
        C.read_raster(p)


@pytest.mark.parametrize("offset, value", [(4, 2), (6, 7), (7, 4)])
def test_unsupported_fields(tmp_path, offset, value):
    p = tmp_path / "a.pfc3"
    C.write_raster(p, np.ones((1, 2, 2)))
    raw = bytearray(p.read_bytes())
    raw[offset] = value
    p.write_bytes(bytes(raw))
    with pytest.raises(C.UnsupportedFormatError):
        C.read_raster(p)


def test_error_kinds_are_distinct():
    kinds = {C.BadMagicError, C.TruncatedError, C.UnsupportedFormatError}
    assert len(kinds) == 3
    assert all(issubclass(k, C.ContainerError) for k in kinds)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_refuses_non_finite(tmp_path, bad):
    x = np.ones((1, 2, 2))
    x[0, 1, 1] = bad
    with pytest.raises(C.ContainerError):
        C.write_raster(tmp_path / "a.pfc3", x)
    assert not (tmp_path / "a.pfc3").exists()


def test_refuses_bad_channels_and_dtype(tmp_path):
    with pytest.raises(C.UnsupportedFormatError):
        C.write_raster(tmp_path / "a.pfc3", np.ones((4, 2, 2)))
    with pytest.raises(C.UnsupportedFormatError):
        C.write_raster(tmp_path / "a.pfc3", np.ones((1, 2, 2)), dtype=np.float16)


shapes = st.tuples(st.sampled_from(C.CHANNEL_COUNTS), st.integers(1, 6), st.integers(1, 6))


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_roundtrip_property(tmp_path_factory, data):
    shape = data.draw(shapes)
    dt = data.draw(st.sampled_from([np.float32, np.float64]))
    width = 32 if dt is np.float32 else 64
    x = data.draw(arrays(dt, shape, elements=st.floats(allow_nan=False, allow_infinity=False, width=width)))
    meta = data.draw(st.dictionaries(st.text(max_size=5), st.integers(-5, 5), max_size=3))
    p = tmp_path_factory.mktemp("rt") / "x.pfc3"
    C.write_raster(p, x, meta)
    y, m = C.read_raster(p)
    assert y.dtype == x.dtype and y.shape == x.shape
    assert y.tobytes() == x.tobytes()
    assert m == meta
