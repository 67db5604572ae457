import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from egobn.archive import ArchiveError, export_csv, from_bytes, read_features, to_bytes, write_features

finite32 = st.floats(-1e6, 1e6, width=32)


class TestArchive:
    def test_header_layout(self):
        blob = to_bytes(np.ones((3, 2)))
        assert blob[:4] == b"EGNF"
        assert struct.unpack("<HII", blob[4:14]) == (1, 3, 2)
        assert len(blob) == 14 + 3 * 2 * 4

    def test_row_major_little_endian(self):
        blob = to_bytes(np.array([[1.0, 2.0], [3.0, 4.0]]))
        assert np.frombuffer(blob[14:], dtype="<f4").tolist() == [1.0, 2.0, 3.0, 4.0]

    @given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=2, max_dims=2, max_side=20), elements=finite32))
    def test_round_trip_exact_at_float32(self, a):
        assert np.array_equal(from_bytes(to_bytes(a)), a.astype(np.float64))

    def test_file_round_trip(self, tmp_path):
        a = np.arange(12, dtype=np.float64).reshape(4, 3) / 7
        write_features(tmp_path / "x.egnf", a)
        assert np.array_equal(read_features(tmp_path / "x.egnf"), a.astype(np.float32))

    def test_bad_magic(self):
        with pytest.raises(ArchiveError, match="magic"):
            from_bytes(b"XXXX" + to_bytes(np.ones((1, 1)))[4:])

    def test_bad_version(self):
        blob = bytearray(to_bytes(np.ones((1, 1))))
        blob[4] = 9
        with pytest.raises(ArchiveError, match="version"):
            from_bytes(bytes(blob))

    def test_truncated(self):
        with pytest.raises(ArchiveError):
            from_bytes(to_bytes(np.ones((2, 2)))[:-1])
        with pytest.raises(ArchiveError):
            from_bytes(b"EGN")

    def test_rejects_1d(self):
        with pytest.raises(ArchiveError):
            to_bytes(np.ones(3))

    def test_csv_export(self, tmp_path):
        export_csv(tmp_path / "x.csv", np.array([[0.5, 1.0], [2.0, 3.25]]))
        assert (tmp_path / "x.csv").read_text().splitlines() == ["d0,d1", "0.5,1", "2,3.25"]
