import os
import struct

import numpy as np
import pytest

from derprop.dpt import (
    DptBadMagic,
    DptTruncated,
    DptUnsupportedDtype,
    DptUnsupportedVersion,
    export_pgm,
    labels_from_pgm,
    read_pgm,
    read_tensor,
    write_tensor,
)


class TestDptRoundTrip:
    def test_3d_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        t = rng.normal(size=(3, 4, 5))
        path = tmp_path / "t.dpt"
        write_tensor(path, t)
        back = read_tensor(path)
        assert back.shape == t.shape
        assert back.tobytes() == t.tobytes()

    def test_many_random_shapes_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        for k in range(100):
            ndim = int(rng.integers(1, 4))
            shape = tuple(int(rng.integers(1, 6)) for _ in range(ndim))
            t = rng.normal(size=shape) * 10.0 ** rng.integers(-8, 8)
            path = tmp_path / f"t{k}.dpt"
            write_tensor(path, t)
            assert read_tensor(path).tobytes() == t.tobytes()

    def test_scalar_and_special_values(self, tmp_path):
        t = np.array([0.0, -0.0, 1e-300, 1e300, 2.0**-1074])
        path = tmp_path / "s.dpt"
        write_tensor(path, t)
        assert read_tensor(path).tobytes() == t.tobytes()

    def test_no_tmp_file_left(self, tmp_path):
        path = tmp_path / "x.dpt"
        write_tensor(path, np.ones(3))
        assert not os.path.exists(str(path) + ".tmp")


class TestDptErrors:
    def _write_valid(self, path):
        write_tensor(path, np.arange(6.0).reshape(2, 3))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dpt"
        self._write_valid(path)
        blob = bytearray(path.read_bytes())
        blob[0:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(DptBadMagic, match="magic"):
            read_tensor(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "ver.dpt"
        self._write_valid(path)
        blob = bytearray(path.read_bytes())
        blob[4] = 9
        path.write_bytes(bytes(blob))
        with pytest.raises(DptUnsupportedVersion, match="version 9"):
            read_tensor(path)

    def test_unsupported_dtype(self, tmp_path):
        path = tmp_path / "dt.dpt"
        self._write_valid(path)
        blob = bytearray(path.read_bytes())
        blob[5] = 3
        path.write_bytes(bytes(blob))
        with pytest.raises(DptUnsupportedDtype, match="dtype code 3"):
            read_tensor(path)

    def test_truncated_payload_reports_byte_counts(self, tmp_path):
        path = tmp_path / "tr.dpt"
        self._write_valid(path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(DptTruncated, match="expected 48 bytes, found 40"):
            read_tensor(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        path = tmp_path / "tl.dpt"
        self._write_valid(path)
        path.write_bytes(path.read_bytes() + b"\x00" * 4)
        with pytest.raises(DptTruncated):
            read_tensor(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "hd.dpt"
        path.write_bytes(b"DPT1\x01")
        with pytest.raises(DptTruncated, match="header"):
            read_tensor(path)

    def test_truncated_dims(self, tmp_path):
        path = tmp_path / "dm.dpt"
        header = struct.pack("<4sBBBB", b"DPT1", 1, 0, 2, 0)
        path.write_bytes(header + struct.pack("<Q", 3))
        with pytest.raises(DptTruncated, match="dims"):
            read_tensor(path)


class TestPgm:
    def test_binary_checkerboard(self, tmp_path):
        path = tmp_path / "c.pgm"
        export_pgm(np.array([[0, 1], [1, 0]]), 2, path)
        pixels = read_pgm(path)
        np.testing.assert_array_equal(pixels, [[0, 255], [255, 0]])

    def test_constant_map(self, tmp_path):
        path = tmp_path / "k.pgm"
        export_pgm(np.full((3, 3), 2, dtype=np.int64), 4, path)
        assert (read_pgm(path) == (2 * 255) // 3).all()

    def test_round_trip_up_to_16_classes(self, tmp_path):
        rng = np.random.default_rng(2)
        for c in range(2, 17):
            labels = rng.integers(0, c, size=(8, 9))
            path = tmp_path / f"rt{c}.pgm"
            export_pgm(labels, c, path)
            recovered = labels_from_pgm(read_pgm(path), c)
            np.testing.assert_array_equal(recovered, labels)

    def test_too_many_classes(self, tmp_path):
        with pytest.raises(ValueError, match="256"):
            export_pgm(np.zeros((2, 2), dtype=np.int64), 257, tmp_path / "x.pgm")

    def test_single_class_all_zero(self, tmp_path):
        path = tmp_path / "z.pgm"
        export_pgm(np.zeros((2, 2), dtype=np.int64), 1, path)
        assert (read_pgm(path) == 0).all()
