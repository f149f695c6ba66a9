import struct

import numpy as np
import pytest

from fmatch import io


def test_matrix_round_trip(tmp_path, rng):
    m = rng.standard_normal((7, 3))
    path = tmp_path / "m.fmmat"
    io.save_matrix(path, m)
    assert np.array_equal(io.load_matrix(path), m)
    assert io.is_matrix_file(path)
    (tmp_path / "d.csv").write_text("1,2\n3,4\n")
    assert not io.is_matrix_file(tmp_path / "d.csv")
    with pytest.raises(FileNotFoundError):
        io.is_matrix_file(tmp_path / "missing")


def test_matrix_layout_is_little_endian_row_major():
    m = np.arange(6, dtype=np.float64).reshape(2, 3)
    data = io.matrix_to_bytes(m)
    header = len(data) - 6 * 8
    rows, cols = struct.unpack_from("<QQ", data, header - 16)
    assert (rows, cols) == (2, 3)
    assert np.array_equal(np.frombuffer(data[header:], "<f8"), np.arange(6.0))


def test_matrix_truncated_rejected(rng):
    data = io.matrix_to_bytes(rng.standard_normal((4, 4)))
    with pytest.raises(io.CacheFormatError):
        io.matrix_from_bytes(data[:-8])
    with pytest.raises(io.CacheFormatError):
        io.matrix_from_bytes(b"XXXXXX" + data[6:])


def test_basis_round_trip(rng):
    mass = rng.uniform(0.1, 1, 10)
    evals = np.sort(rng.uniform(0, 3, 4))
    evecs = rng.standard_normal((10, 4))
    back = io.basis_from_bytes(io.basis_to_bytes(mass, evals, evecs))
    for a, b in zip(back, (mass, evals, evecs)):
        assert np.array_equal(a, b)
    with pytest.raises(io.CacheFormatError):
        io.basis_from_bytes(io.basis_to_bytes(mass, evals, evecs)[:-1])


def test_atomic_write_leaves_no_temp(tmp_path):
    path = tmp_path / "sub" / "f.txt"
    path.parent.mkdir()
    io.atomic_write_text(path, "a")
    io.atomic_write_text(path, "b")
    assert path.read_text() == "b"
    assert [p.name for p in path.parent.iterdir()] == ["f.txt"]


def test_point_map_round_trip():
    a = np.array([3, 0, 2, 2])
    text = io.format_point_map(a, "src", "tgt")
    assert text.splitlines()[0] == "# p2p src tgt 4"
    got, src, tgt = io.parse_point_map(text)
    assert np.array_equal(got, a) and (src, tgt) == ("src", "tgt")


def test_point_map_without_header():
    got, src, tgt = io.parse_point_map("1\n0\n\n2\n")
    assert got.tolist() == [1, 0, 2] and src is None


@pytest.mark.parametrize(
    "text",
    ["# p2p a b 3\n0\n1\n", "0\nx\n", "0\n-1\n", "# p2p a b\n0\n"],
)
def test_point_map_errors(text):
    with pytest.raises(io.PointMapFormatError):
        io.parse_point_map(text, "f.txt")
