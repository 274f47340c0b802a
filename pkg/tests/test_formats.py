import struct

import numpy as np
import pytest

from pqtopk import FormatError, PQConfig, generate_synthetic, read_dense, read_instance, write_dense, write_instance


@pytest.fixture
def instance_file(tmp_path):
    cb, emb, _ = generate_synthetic(PQConfig(50, 4, 16, 32), 3)
    path = tmp_path / "inst.pqtk"
    write_instance(path, cb, emb)
    return path, cb, emb


def test_round_trip(instance_file):
    path, cb, emb = instance_file
    cb2, emb2 = read_instance(path)
    assert cb2 == cb and emb2 == emb


def test_byte_layout(tiny, tmp_path):
    cb, emb, _ = tiny
    path = tmp_path / "tiny.pqtk"
    assert write_instance(path, cb, emb) == 84
    raw = path.read_bytes()
    assert raw[:4] == b"PQTK"
    assert struct.unpack("<I4Q", raw[4:40]) == (1, 3, 2, 2, 4)
    assert np.frombuffer(raw[40:52], "<u2").tolist() == [0, 0, 1, 1, 0, 1]
    assert np.frombuffer(raw[52:], "<f4").tolist() == [1, 0, 0, 1, 1, 1, 2, 0]


def test_packaged_fixture_matches(tiny, tiny_instance_path):
    cb, emb, _ = tiny
    cb2, emb2 = read_instance(tiny_instance_path)
    assert cb2 == cb and emb2 == emb


def test_bad_magic(instance_file):
    path = instance_file[0]
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="bad magic"):
        read_instance(path)


def test_bad_version(instance_file):
    path = instance_file[0]
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 9)
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        read_instance(path)


@pytest.mark.parametrize("cut", [10, 41, 500])
def test_truncated(instance_file, cut):
    path = instance_file[0]
    path.write_bytes(path.read_bytes()[:cut])
    with pytest.raises(FormatError, match="truncated"):
        read_instance(path)


def test_trailing_bytes(instance_file):
    path = instance_file[0]
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        read_instance(path)


def test_corrupt_code(instance_file):
    path = instance_file[0]
    raw = bytearray(path.read_bytes())
    raw[40:42] = struct.pack("<H", 16)
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="code out of range"):
        read_instance(path)


def test_dense_round_trip(tmp_path):
    W = np.random.default_rng(0).standard_normal((7, 5)).astype(np.float32)
    path = tmp_path / "w.dens"
    assert write_dense(path, W) == 24 + 7 * 5 * 4
    raw = path.read_bytes()
    assert raw[:4] == b"DENS" and struct.unpack("<I2Q", raw[4:24]) == (1, 7, 5)
    assert np.array_equal(read_dense(path), W)


def test_dense_empty_rejected(tmp_path):
    path = tmp_path / "w.dens"
    path.write_bytes(b"DENS" + struct.pack("<I2Q", 1, 0, 4))
    with pytest.raises(FormatError, match="empty"):
        read_dense(path)
