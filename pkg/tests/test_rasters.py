import numpy as np
import pytest

from eds.errors import FormatError
from eds.rasters import read_pgm, read_ppm, write_pgm, write_ppm


def test_ppm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, size=(7, 5, 3), dtype=np.uint8)
    p = tmp_path / "x.ppm"
    write_ppm(p, img)
    assert np.array_equal(read_ppm(p), img)


def test_pgm_round_trip(tmp_path, rng):
    mask = rng.integers(0, 15, size=(9, 4), dtype=np.uint8)
    p = tmp_path / "x.pgm"
    write_pgm(p, mask)
    assert np.array_equal(read_pgm(p), mask)


def test_write_is_deterministic(tmp_path, rng):
    img = rng.integers(0, 256, size=(6, 6, 3), dtype=np.uint8)
    a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
    write_ppm(a, img)
    write_ppm(b, img)
    assert a.read_bytes() == b.read_bytes()


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "x.ppm"
    p.write_bytes(b"P5\n2 2\n255\n" + bytes(4))
    with pytest.raises(FormatError, match="not a P6"):
        read_ppm(p)


def test_truncated_payload_rejected(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(FormatError, match="expected 16"):
        read_pgm(p)


def test_wrong_shape_rejected(tmp_path):
    with pytest.raises(ValueError):
        write_ppm(tmp_path / "x.ppm", np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "x.pgm", np.zeros((4, 4, 3), dtype=np.uint8))
