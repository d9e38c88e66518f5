"""Deterministic synthetic road-scene corpora with pixel-exact masks.

Images are horizontal class bands (background sky on top, road surfaces below)
drawn from a per-class color palette, shifted by a per-scenario tint, and
perturbed with Gaussian noise. The scenario mixture is controllable and
deliberately imbalanced by default; tints are far enough apart that scenarios
stay linearly separable in the grid embedding, which is what lets k-means
recover them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .manifest import (
    DEFAULT_CLASS_NAMES,
    DatasetManifest,
    ImageRecord,
    ScenarioTag,
    load_manifest,
    save_manifest,
)
from .rasters import read_pgm, read_ppm, write_pgm, write_ppm


@dataclass(frozen=True)
class PaletteEntry:
    mean_rgb: tuple[float, float, float]
    sigma: float = 6.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


# Active classes: background plus four road surfaces (indices into
# DEFAULT_CLASS_NAMES: asphalt=1, distress=2, gravel=3, wet-surface=7).
DEFAULT_PALETTE = {
    0: PaletteEntry((120.0, 170.0, 220.0)),
    1: PaletteEntry((95.0, 95.0, 100.0)),
    2: PaletteEntry((130.0, 115.0, 95.0)),
    3: PaletteEntry((160.0, 150.0, 125.0)),
    7: PaletteEntry((75.0, 85.0, 110.0)),
}

DEFAULT_BANDS = (0, 1, 2, 3, 7)

_DAY_URBAN = {"time": "day", "road_type": "urban"}
DEFAULT_MIXTURE = {
    ScenarioTag(weather="sunny", **_DAY_URBAN): 0.8,
    ScenarioTag(weather="rainy", **_DAY_URBAN): 0.1,
    ScenarioTag(weather="foggy", **_DAY_URBAN): 0.05,
    ScenarioTag(weather="snowy", **_DAY_URBAN): 0.05,
}

DEFAULT_TINTS = {
    ScenarioTag(weather="sunny", **_DAY_URBAN): (0.0, 0.0, 0.0),
    ScenarioTag(weather="rainy", **_DAY_URBAN): (-45.0, -40.0, -20.0),
    ScenarioTag(weather="foggy", **_DAY_URBAN): (40.0, 40.0, 45.0),
    ScenarioTag(weather="snowy", **_DAY_URBAN): (70.0, 75.0, 85.0),
}


def _tag_key(tag: ScenarioTag) -> tuple[str, str, str]:
    return (tag.weather, tag.time, tag.road_type)


@dataclass(frozen=True)
class SynthSpec:
    height: int = 16
    width: int = 16
    palette: dict[int, PaletteEntry] = field(default_factory=lambda: dict(DEFAULT_PALETTE))
    bands: tuple[int, ...] = DEFAULT_BANDS
    band_jitter: float = 0.08  # fraction of H applied to interior band boundaries
    mixture: dict[ScenarioTag, float] = field(default_factory=lambda: dict(DEFAULT_MIXTURE))
    tints: dict[ScenarioTag, tuple[float, float, float]] = field(
        default_factory=lambda: dict(DEFAULT_TINTS)
    )
    corpus_size: int = 1000
    labeled_fraction: float = 0.14
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES
    seed: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("image size must be positive")
        if self.corpus_size < 1:
            raise ValueError("corpus_size must be >= 1")
        total = sum(self.mixture.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"scenario mixture must sum to 1, got {total}")
        if not 0.0 < self.labeled_fraction < 1.0:
            raise ValueError("labeled_fraction must be in (0, 1)")
        if self.labeled_fraction + self.val_fraction + self.test_fraction >= 1.0:
            raise ValueError("split fractions must leave room for the unlabeled pool")
        if not self.bands:
            raise ValueError("bands must be non-empty")
        for cls in self.bands:
            if cls not in self.palette:
                raise ValueError(f"band class {cls} missing from palette")
            if cls >= len(self.class_names):
                raise ValueError(f"band class {cls} outside class list")
        for tag in self.mixture:
            if tag not in self.tints:
                raise ValueError(f"scenario {tag} missing a tint")


@dataclass(frozen=True)
class Corpus:
    images: np.ndarray  # (N, H, W, 3) uint8
    masks: np.ndarray  # (N, H, W) uint8, exact band layout for every image
    manifest: DatasetManifest

    def index_of(self, rec_id: str) -> int:
        idx = getattr(self, "_id_index", None)
        if idx is None:
            idx = {r.id: i for i, r in enumerate(self.manifest.records)}
            object.__setattr__(self, "_id_index", idx)
        return idx[rec_id]


def _band_rows(h: int, bands: int, jitter: float, rng: np.random.Generator) -> np.ndarray:
    """Interior boundaries around equal splits, jittered then kept monotone."""
    bounds = np.array([h * i / bands for i in range(bands + 1)])
    if jitter > 0:
        bounds[1:-1] += rng.uniform(-jitter * h, jitter * h, size=bands - 1)
        bounds = np.sort(bounds)
    return np.clip(np.round(bounds).astype(np.int64), 0, h)


def _render(
    spec: SynthSpec, tag: ScenarioTag, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    h, w = spec.height, spec.width
    mask = np.empty((h, w), dtype=np.uint8)
    image = np.empty((h, w, 3), dtype=np.float64)
    bounds = _band_rows(h, len(spec.bands), spec.band_jitter, rng)
    tint = np.asarray(spec.tints[tag], dtype=np.float64)
    for bi, cls in enumerate(spec.bands):
        r0, r1 = bounds[bi], bounds[bi + 1]
        if r0 >= r1:
            continue
        entry = spec.palette[cls]
        mask[r0:r1] = cls
        block = np.asarray(entry.mean_rgb) + tint
        if entry.sigma > 0:
            block = block + rng.normal(0.0, entry.sigma, size=(r1 - r0, w, 3))
        image[r0:r1] = block
    return np.clip(image, 0.0, 255.0).astype(np.uint8), mask


def generate(spec: SynthSpec) -> Corpus:
    """Render the corpus; a pure function of the spec (same seed, same bytes)."""
    n = spec.corpus_size
    root = np.random.SeedSequence(spec.seed)
    image_seeds = root.spawn(n)
    split_rng = np.random.default_rng(root.spawn(1)[0])

    tags = sorted(spec.mixture, key=_tag_key)
    probs = np.array([spec.mixture[t] for t in tags])
    cumulative = np.cumsum(probs)

    n_lab = round(spec.labeled_fraction * n)
    n_val = round(spec.val_fraction * n)
    n_test = round(spec.test_fraction * n)
    split_names = np.full(n, "unlabeled", dtype=object)
    perm = split_rng.permutation(n)
    split_names[perm[:n_lab]] = "labeled-train"
    split_names[perm[n_lab:n_lab + n_val]] = "val"
    split_names[perm[n_lab + n_val:n_lab + n_val + n_test]] = "test"

    images = np.empty((n, spec.height, spec.width, 3), dtype=np.uint8)
    masks = np.empty((n, spec.height, spec.width), dtype=np.uint8)
    records = []
    for i in range(n):
        rng = np.random.default_rng(image_seeds[i])
        # clamp: float cumsum may land a hair under 1.0
        draw = min(int(np.searchsorted(cumulative, rng.random(), side="right")), len(tags) - 1)
        tag = tags[draw]
        images[i], masks[i] = _render(spec, tag, rng)
        rec_id = f"img{i:05d}"
        split = str(split_names[i])
        records.append(
            ImageRecord(
                id=rec_id,
                image_path=f"images/{rec_id}.ppm",
                label_path=(
                    f"masks/{rec_id}.pgm" if split in ("labeled-train", "val", "test") else None
                ),
                scenario=tag,
                split=split,
            )
        )
    manifest = DatasetManifest(records=tuple(records), class_names=spec.class_names)
    return Corpus(images=images, masks=masks, manifest=manifest)


def write_corpus(corpus: Corpus, out_dir: str | Path) -> Path:
    """Persist images, labeled-split masks, and the manifest under out_dir."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for i, rec in enumerate(corpus.manifest.records):
        write_ppm(out / rec.image_path, corpus.images[i])
        if rec.label_path is not None:
            write_pgm(out / rec.label_path, corpus.masks[i])
    manifest_path = out / "manifest.jsonl"
    save_manifest(corpus.manifest, manifest_path)
    return manifest_path


def load_corpus(manifest_path: str | Path) -> Corpus:
    """Read a written corpus back; records without labels get all-zero masks."""
    m = load_manifest(manifest_path)
    images = []
    masks = []
    for rec in m.records:
        img = read_ppm(m.resolve(rec.image_path))
        images.append(img)
        if rec.label_path is not None:
            masks.append(read_pgm(m.resolve(rec.label_path)))
        else:
            masks.append(np.zeros(img.shape[:2], dtype=np.uint8))
    return Corpus(images=np.stack(images), masks=np.stack(masks), manifest=m)
