import math

import numpy as np
import pytest

from eds.embed import (
    EmbeddingSet,
    RoiSpec,
    encode_grid,
    extract_roi,
    read_embeddings,
    standardize,
    write_embeddings,
)
from eds.errors import DimensionError, EmptyCropError, FormatError


def image_of(h, w, rng=None):
    if rng is None:
        return np.arange(h * w * 3, dtype=np.uint8).reshape(h, w, 3)
    return rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)


# --- extract_roi ---

def test_roi_bottom_60_of_100_rows():
    img = image_of(100, 4)
    out = extract_roi(img, RoiSpec(0.6))
    assert out.shape == (60, 4, 3)
    assert np.array_equal(out, img[40:])


def test_roi_identity_at_full_fraction():
    img = image_of(7, 3)
    assert np.array_equal(extract_roi(img, RoiSpec(1.0)), img)


def test_roi_ceiling_rule_h5():
    img = image_of(5, 2)
    out = extract_roi(img, RoiSpec(0.5))
    # ceil(5 * 0.5) boundary keeps rows 3..4
    assert out.shape[0] == 2
    assert np.array_equal(out, img[3:])


def test_roi_empty_crop_error():
    with pytest.raises(EmptyCropError):
        extract_roi(image_of(5, 2), RoiSpec(0.1))


def test_roi_fraction_validation():
    with pytest.raises(ValueError):
        RoiSpec(0.0)
    with pytest.raises(ValueError):
        RoiSpec(1.2)


def test_roi_row_count_matches_floor_rule(rng):
    for _ in range(200):
        h = int(rng.integers(1, 120))
        frac = float(rng.uniform(0.05, 1.0))
        img = image_of(h, 3)
        try:
            out = extract_roi(img, RoiSpec(frac))
        except EmptyCropError:
            assert math.floor(round(h * frac, 9)) == 0
            continue
        assert out.shape[0] == math.floor(round(h * frac, 9))
        assert out.shape[1:] == img.shape[1:]
        assert out.shape[0] >= 1


# --- encode_grid ---

def test_grid_constant_image():
    img = np.empty((8, 8, 3), dtype=np.uint8)
    img[..., 0], img[..., 1], img[..., 2] = 10, 20, 30
    v = encode_grid(img, 2)
    assert v.shape == (12,)
    assert np.array_equal(v, np.tile([10.0, 20.0, 30.0], 4))


def test_grid_one_cell_is_global_mean(rng):
    img = image_of(6, 5, rng)
    v = encode_grid(img, 1)
    assert np.allclose(v, img.reshape(-1, 3).mean(axis=0))


def test_grid_2x2_image_cells_equal_pixels():
    img = np.array(
        [[[1, 2, 3], [4, 5, 6]], [[7, 8, 9], [10, 11, 12]]], dtype=np.uint8
    )
    v = encode_grid(img, 2)
    assert np.array_equal(v, np.arange(1, 13, dtype=np.float64))


def test_grid_permutation_within_cell_invariant(rng):
    img = image_of(8, 8, rng)
    v1 = encode_grid(img, 2)
    shuffled = img.copy()
    for r0 in (0, 4):
        for c0 in (0, 4):
            block = shuffled[r0:r0 + 4, c0:c0 + 4].reshape(-1, 3)
            perm = rng.permutation(block.shape[0])
            shuffled[r0:r0 + 4, c0:c0 + 4] = block[perm].reshape(4, 4, 3)
    assert np.array_equal(encode_grid(shuffled, 2), v1)


def test_grid_finer_than_image_rejected():
    with pytest.raises(ValueError, match="finer"):
        encode_grid(image_of(2, 2), 3)


# --- EDSE file format ---

def make_set(ids=("a", "bb"), dim=4, rng=None):
    if rng is None:
        rng = np.random.default_rng(0)
    values = rng.normal(size=(len(ids), dim)).astype(np.float32)
    return EmbeddingSet(ids, values)


def test_edse_round_trip_bit_exact(tmp_path, rng):
    s = make_set(tuple(f"id{i}" for i in range(7)), dim=5)
    p = tmp_path / "e.edse"
    write_embeddings(s, p)
    loaded = read_embeddings(p)
    assert loaded == s
    assert loaded.values.dtype == np.float32


def test_edse_file_size_arithmetic(tmp_path):
    s = make_set(("a", "bb"), dim=4)
    p = tmp_path / "e.edse"
    write_embeddings(s, p)
    id_table = sum(4 + len(i.encode()) for i in s.ids)
    assert p.stat().st_size == 24 + 2 * 4 * 4 + id_table


def test_edse_zero_dim_rejected():
    with pytest.raises(DimensionError):
        EmbeddingSet(("a",), np.zeros((1, 0), dtype=np.float32))


def test_edse_zero_dim_header_rejected(tmp_path):
    p = tmp_path / "bad.edse"
    import struct

    p.write_bytes(b"EDSE" + struct.pack("<IQQ", 1, 0, 0))
    with pytest.raises(DimensionError):
        read_embeddings(p)


def test_edse_bad_magic(tmp_path):
    s = make_set()
    p = tmp_path / "e.edse"
    write_embeddings(s, p)
    data = bytearray(p.read_bytes())
    data[:4] = b"NOPE"
    p.write_bytes(bytes(data))
    with pytest.raises(FormatError, match="magic"):
        read_embeddings(p)


def test_edse_truncated_payload(tmp_path):
    s = make_set()
    p = tmp_path / "e.edse"
    write_embeddings(s, p)
    p.write_bytes(p.read_bytes()[:30])
    with pytest.raises(FormatError, match="truncated"):
        read_embeddings(p)


def test_edse_truncated_id_table(tmp_path):
    s = make_set()
    p = tmp_path / "e.edse"
    write_embeddings(s, p)
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(FormatError, match="id table"):
        read_embeddings(p)


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError, match="unique"):
        EmbeddingSet(("a", "a"), np.zeros((2, 3), dtype=np.float32))


def test_non_finite_rejected():
    values = np.array([[1.0, np.nan]], dtype=np.float32)
    with pytest.raises(ValueError, match="finite"):
        EmbeddingSet(("a",), values)


def test_standardize_zero_mean_unit_std(rng):
    s = make_set(tuple(f"i{k}" for k in range(50)), dim=3, rng=rng)
    z = standardize(s)
    assert np.allclose(z.values.mean(axis=0), 0.0, atol=1e-5)
    assert np.allclose(z.values.std(axis=0), 1.0, atol=1e-4)
