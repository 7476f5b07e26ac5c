import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import DEEP_CONV, MLP, SMALL_CONV, make_net, random_input
from txuxi import smap
from txuxi.errors import ChecksumError, WeightFormatError
from txuxi.micronet import build_network, forward, load_weights, save_weights
from txuxi.micronet import weights_io


def _resign(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 16), specs=st.sampled_from([SMALL_CONV, DEEP_CONV, MLP]),
       head=st.sampled_from(["classification", "regression"]))
def test_weight_round_trip_is_bitwise(seed, specs, head):
    if head == "regression":
        specs = specs[:-1] + [("dense", 1)]
    net = make_net(specs, seed=seed, dtype=np.float32, head=head)
    back = weights_io.decode(weights_io.encode(net))
    assert back.head == net.head and back.input_shape == net.input_shape
    assert [type(l) for l in back.layers] == [type(l) for l in net.layers]
    x = random_input((2, 1, 8, 8), seed).astype(np.float32)
    assert forward(back, x)[0].tobytes() == forward(net, x)[0].tobytes()


def test_save_and_load_file(tmp_path):
    net = build_network(4, seed=3)
    path = tmp_path / "m.mnet"
    save_weights(net, path)
    raw = path.read_bytes()
    assert raw[:4] == b"MNET" and struct.unpack("<HH", raw[4:8]) == (1, len(net.layers))
    assert struct.unpack("<I", raw[-4:])[0] == zlib.crc32(raw[:-4])
    x = random_input((1, 64, 64)).astype(np.float32)
    assert forward(load_weights(path), x)[0].tobytes() == forward(net, x)[0].tobytes()


def test_truncated_weight_file_is_checksum_error(tmp_path):
    raw = weights_io.encode(make_net(dtype=np.float32))
    for cut in (len(raw) - 1, len(raw) // 2, 6):
        with pytest.raises(ChecksumError):
            weights_io.decode(raw[:cut])


def test_flipped_byte_is_checksum_error():
    raw = bytearray(weights_io.encode(make_net(dtype=np.float32)))
    raw[20] ^= 0xFF
    with pytest.raises(ChecksumError):
        weights_io.decode(bytes(raw))


def test_wrong_magic_is_format_error():
    raw = weights_io.encode(make_net(dtype=np.float32))
    bad = _resign(b"XNET" + raw[4:-4])
    with pytest.raises(WeightFormatError) as info:
        weights_io.decode(bad)
    assert not isinstance(info.value, ChecksumError)


def test_wrong_version_is_format_error():
    raw = weights_io.encode(make_net(dtype=np.float32))
    bad = _resign(raw[:4] + struct.pack("<H", 2) + raw[6:-4])
    with pytest.raises(WeightFormatError):
        weights_io.decode(bad)


def test_missing_weight_file(tmp_path):
    with pytest.raises(OSError):
        load_weights(tmp_path / "none.mnet")


@settings(max_examples=30, deadline=None)
@given(h=st.integers(1, 20), w=st.integers(1, 20), seed=st.integers(0, 1000))
def test_smap_round_trip(h, w, seed):
    arr = np.random.default_rng(seed).normal(size=(h, w)).astype(np.float32)
    raw = smap.encode(arr)
    assert raw[:4] == b"SMAP" and len(raw) == 4 + 2 + 8 + 4 * h * w + 4
    assert struct.unpack("<HII", raw[4:14]) == (1, h, w)
    np.testing.assert_array_equal(smap.decode(raw), arr)


def test_smap_file_and_errors(tmp_path):
    arr = np.arange(6, dtype=np.float32).reshape(2, 3)
    p = tmp_path / "a.smap"
    smap.write_smap(p, arr)
    np.testing.assert_array_equal(smap.read_smap(p), arr)
    raw = p.read_bytes()
    with pytest.raises(ChecksumError):
        smap.decode(raw[:-2])
    with pytest.raises(WeightFormatError):
        smap.decode(_resign(b"MNET" + raw[4:-4]))
