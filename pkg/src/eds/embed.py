"""Road-region embeddings: bottom-fraction ROI crop, grid-mean encoder, EDSE file IO.

The built-in encoder is a desk-scale stand-in for a pretrained network: it
averages each color channel over a g x g cell grid of the ROI, giving a
3*g*g-dimensional vector. Externally produced embeddings enter through the
EDSE binary format instead; both routes feed the same clustering code.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, EmptyCropError, FormatError
from .manifest import DatasetManifest, ImageRecord
from .rasters import read_ppm

EDSE_MAGIC = b"EDSE"
EDSE_VERSION = 1
DEFAULT_BOTTOM_FRACTION = 0.6
DEFAULT_GRID = 8


@dataclass(frozen=True)
class RoiSpec:
    """Keep the bottom `bottom_fraction` of image rows; sky and far background drop out."""

    bottom_fraction: float = DEFAULT_BOTTOM_FRACTION

    def __post_init__(self):
        if not 0.0 < self.bottom_fraction <= 1.0:
            raise ValueError(
                f"bottom_fraction must be in (0, 1], got {self.bottom_fraction}"
            )


@dataclass(frozen=True)
class Embedding:
    id: str
    values: np.ndarray


class EmbeddingSet:
    """Fixed-dimension embeddings for an ordered collection of record ids."""

    def __init__(self, ids, values: np.ndarray):
        values = np.asarray(values, dtype=np.float32)
        ids = tuple(ids)
        if values.ndim != 2:
            raise DimensionError(f"values must be 2-D, got shape {values.shape}")
        if values.shape[1] < 1:
            raise DimensionError("embedding dimension must be >= 1")
        if len(ids) != values.shape[0]:
            raise DimensionError(
                f"{len(ids)} ids for {values.shape[0]} embedding rows"
            )
        if len(set(ids)) != len(ids):
            raise ValueError("embedding ids must be unique")
        if values.size and not np.isfinite(values).all():
            raise ValueError("embeddings contain non-finite values")
        self.ids = ids
        self.values = values

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def entry(self, i: int) -> Embedding:
        return Embedding(self.ids[i], self.values[i])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EmbeddingSet)
            and self.ids == other.ids
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )


def extract_roi(image: np.ndarray, spec: RoiSpec = RoiSpec()) -> np.ndarray:
    """Crop to the bottom rows: keeps rows ceil(H*(1-f))..H-1, width untouched."""
    if image.ndim < 2 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError(f"image must be at least HxW, got shape {image.shape}")
    h = image.shape[0]
    # snap before ceil so binary rounding of f cannot shift an exact boundary
    start = math.ceil(round(h * (1.0 - spec.bottom_fraction), 9))
    if start >= h:
        raise EmptyCropError(
            f"bottom_fraction={spec.bottom_fraction} keeps no rows of H={h}"
        )
    return image[start:]


def encode_grid(image: np.ndarray, grid: int = DEFAULT_GRID) -> np.ndarray:
    """Per-cell per-channel means over a grid x grid partition; d = 3*grid**2.

    Cell boundaries are floor(i*H/grid). Deterministic and invariant to pixel
    order within a cell.
    """
    if grid < 1:
        raise ValueError(f"grid must be >= 1, got {grid}")
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {image.shape}")
    h, w = image.shape[:2]
    if h < grid or w < grid:
        raise ValueError(f"grid {grid} is finer than image {h}x{w}")
    img = image.astype(np.float64)
    rb = [h * i // grid for i in range(grid + 1)]
    cb = [w * i // grid for i in range(grid + 1)]
    out = np.empty(3 * grid * grid, dtype=np.float64)
    pos = 0
    for r in range(grid):
        for c in range(grid):
            cell = img[rb[r]:rb[r + 1], cb[c]:cb[c + 1]]
            out[pos:pos + 3] = cell.mean(axis=(0, 1))
            pos += 3
    return out


def encode_records(
    m: DatasetManifest,
    records: tuple[ImageRecord, ...] | None = None,
    roi: RoiSpec = RoiSpec(),
    grid: int = DEFAULT_GRID,
) -> EmbeddingSet:
    """Embed images for the given records (manifest order preserved)."""
    if records is None:
        records = m.records
    ids = [r.id for r in records]
    rows = [
        encode_grid(extract_roi(read_ppm(m.resolve(r.image_path)), roi), grid)
        for r in records
    ]
    values = np.stack(rows) if rows else np.zeros((0, 3 * grid * grid))
    return EmbeddingSet(ids, values.astype(np.float32))


def encode_images(images: np.ndarray, ids, roi: RoiSpec = RoiSpec(),
                  grid: int = DEFAULT_GRID) -> EmbeddingSet:
    """In-memory variant of encode_records for an (N, H, W, 3) image stack."""
    rows = [encode_grid(extract_roi(img, roi), grid) for img in images]
    values = np.stack(rows) if rows else np.zeros((0, 3 * grid * grid))
    return EmbeddingSet(ids, values.astype(np.float32))


def standardize(s: EmbeddingSet) -> EmbeddingSet:
    """Optional per-dimension z-scoring; constant dimensions are left at zero."""
    v = s.values.astype(np.float64)
    mean = v.mean(axis=0)
    std = v.std(axis=0)
    std[std == 0.0] = 1.0
    return EmbeddingSet(s.ids, ((v - mean) / std).astype(np.float32))


def write_embeddings(s: EmbeddingSet, path: str | Path) -> None:
    """EDSE format, little-endian: magic, version u32, count u64, dim u64,
    count*dim f32 row-major, then count (u32 length, UTF-8 bytes) id entries."""
    with open(path, "wb") as f:
        f.write(EDSE_MAGIC)
        f.write(struct.pack("<IQQ", EDSE_VERSION, len(s), s.dim))
        f.write(np.ascontiguousarray(s.values, dtype="<f4").tobytes())
        for rec_id in s.ids:
            raw = rec_id.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)


def read_embeddings(path: str | Path) -> EmbeddingSet:
    data = Path(path).read_bytes()
    if data[:4] != EDSE_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {EDSE_MAGIC!r}")
    if len(data) < 24:
        raise FormatError(f"{path}: truncated header ({len(data)} bytes)")
    version, count, dim = struct.unpack_from("<IQQ", data, 4)
    if version != EDSE_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dim < 1:
        raise DimensionError(f"{path}: dimension must be >= 1, header says {dim}")
    pos = 24
    payload = count * dim * 4
    if len(data) < pos + payload:
        raise FormatError(
            f"{path}: truncated payload, need {payload} bytes after header"
        )
    values = np.frombuffer(data[pos:pos + payload], dtype="<f4").reshape(count, dim)
    pos += payload
    ids = []
    for _ in range(count):
        if len(data) < pos + 4:
            raise FormatError(f"{path}: truncated id table")
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if len(data) < pos + length:
            raise FormatError(f"{path}: truncated id table")
        ids.append(data[pos:pos + length].decode("utf-8"))
        pos += length
    return EmbeddingSet(ids, values.copy())
