"""Uncompressed 8-bit raster IO: binary PPM (P6) for RGB images, PGM (P5) for index masks."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    """Write an H x W x 3 uint8 array as binary PPM."""
    img = np.ascontiguousarray(image, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def write_pgm(path: str | Path, mask: np.ndarray) -> None:
    """Write an H x W uint8 array as binary PGM."""
    m = np.ascontiguousarray(mask, dtype=np.uint8)
    if m.ndim != 2:
        raise ValueError(f"expected HxW mask, got shape {m.shape}")
    h, w = m.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(m.tobytes())


def _read_netpbm(path: str | Path, magic: bytes, channels: int) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(magic):
        raise FormatError(f"{path}: not a {magic.decode()} raster")
    # header = magic, width, height, maxval as whitespace-separated ASCII tokens
    tokens: list[int] = []
    pos = len(magic)
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header")
        tokens.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after maxval
    w, h, maxval = tokens
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    expected = w * h * channels
    payload = data[pos : pos + expected]
    if len(payload) != expected:
        raise FormatError(f"{path}: expected {expected} pixel bytes, found {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape((h, w, channels)) if channels == 3 else arr.reshape((h, w))


def read_ppm(path: str | Path) -> np.ndarray:
    return _read_netpbm(path, b"P6", 3)


def read_pgm(path: str | Path) -> np.ndarray:
    return _read_netpbm(path, b"P5", 1)
