import json

import numpy as np
import pytest

from adaptrecon.container import MAGIC, ContainerError, encode_tensor, read_tensor, write_tensor


@pytest.mark.parametrize("arr", [np.arange(6.0).reshape(2, 3), np.array(3.5),
                                 (np.arange(8) + 1j * np.arange(8)[::-1]).reshape(2, 2, 2)])
def test_round_trip(tmp_path, arr):
    entry = write_tensor(tmp_path / "t.bin", arr)
    out = read_tensor(tmp_path / "t.bin", entry)
    assert out.dtype == (np.complex128 if np.iscomplexobj(arr) else np.float64)
    np.testing.assert_array_equal(out, arr)


def test_header_layout():
    blob = encode_tensor(np.zeros((2, 3)))
    assert blob[:4] == MAGIC
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[8:12], "little") == 2
    assert int.from_bytes(blob[12:20], "little") == 2
    assert int.from_bytes(blob[20:28], "little") == 3
    assert len(blob) == 28 + 6 * 8


def test_truncated_file(tmp_path):
    entry = write_tensor(tmp_path / "t.bin", np.ones(10))
    p = tmp_path / "t.bin"
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ContainerError, match="byte count"):
        read_tensor(p, entry)


def test_checksum_mismatch_names_file(tmp_path):
    entry = write_tensor(tmp_path / "t.bin", np.ones(4))
    p = tmp_path / "t.bin"
    blob = bytearray(p.read_bytes())
    blob[-1] ^= 0xFF
    p.write_bytes(bytes(blob))
    with pytest.raises(ContainerError, match="t.bin"):
        read_tensor(p, entry)


def test_bad_magic_and_version(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(ContainerError, match="magic"):
        read_tensor(p)
    blob = bytearray(encode_tensor(np.ones(2)))
    blob[4] = 9
    p.write_bytes(bytes(blob))
    with pytest.raises(ContainerError, match="version"):
        read_tensor(p)


def test_shape_mismatch_against_manifest(tmp_path):
    entry = write_tensor(tmp_path / "t.bin", np.ones((2, 2)))
    bad = json.loads(json.dumps(entry))
    bad["shape"] = [4]
    with pytest.raises(ContainerError, match="shape"):
        read_tensor(tmp_path / "t.bin", bad)
