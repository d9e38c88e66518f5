"""Dataset catalog: per-image records with scenario metadata, splits, and label paths.

Manifest files are UTF-8 JSON lines. The first line is a header object carrying
the format version ("eds-manifest/1") and the ordered class-name list; every
following line is one record. The line format is append-friendly and diffs
cleanly at catalog scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ManifestError

FORMAT_VERSION = "eds-manifest/1"

WEATHER_VALUES = ("sunny", "cloudy", "rainy", "foggy", "snowy", "unknown")
TIME_VALUES = ("day", "night", "dawn-dusk", "unknown")
ROAD_TYPE_VALUES = ("motorway", "highway", "urban", "rural", "hilly", "unknown")
SPLITS = ("labeled-train", "unlabeled", "val", "test")

SCENARIO_AXES = {
    "weather": WEATHER_VALUES,
    "time": TIME_VALUES,
    "road_type": ROAD_TYPE_VALUES,
}

# Background sink class at index 0, then the 14 road-region classes.
DEFAULT_CLASS_NAMES = (
    "background",
    "asphalt",
    "distress",
    "gravel",
    "boggy",
    "vegetation-misc",
    "crag-stone",
    "wet-surface",
    "road-grime",
    "drainage-grate",
    "earthen",
    "water-puddle",
    "misc",
    "concrete",
    "speed-breaker",
)

# Splits that must carry a label path; the others must not.
LABELED_SPLITS = frozenset({"labeled-train", "val", "test"})


@dataclass(frozen=True)
class ScenarioTag:
    """Physical capture conditions: weather, time of day, road hierarchy."""

    weather: str = "unknown"
    time: str = "unknown"
    road_type: str = "unknown"

    def __post_init__(self):
        if self.weather not in WEATHER_VALUES:
            raise ManifestError(f"invalid weather value {self.weather!r}")
        if self.time not in TIME_VALUES:
            raise ManifestError(f"invalid time value {self.time!r}")
        if self.road_type not in ROAD_TYPE_VALUES:
            raise ManifestError(f"invalid road_type value {self.road_type!r}")

    def axis_value(self, axis: str) -> str:
        if axis not in SCENARIO_AXES:
            raise ValueError(f"unknown scenario axis {axis!r}")
        return getattr(self, axis)


@dataclass(frozen=True)
class ImageRecord:
    id: str
    image_path: str
    scenario: ScenarioTag
    split: str
    label_path: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ManifestError("record id must be non-empty")
        if self.split not in SPLITS:
            raise ManifestError(f"record {self.id!r}: invalid split {self.split!r}")
        has_label = self.label_path is not None
        if has_label != (self.split in LABELED_SPLITS):
            raise ManifestError(
                f"record {self.id!r}: label_path must be present iff split is one of "
                f"{sorted(LABELED_SPLITS)} (split={self.split!r})"
            )


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ImageRecord, ...]
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES
    base_dir: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.class_names:
            raise ManifestError("class_names must be non-empty")
        if len(set(self.class_names)) != len(self.class_names):
            raise ManifestError("class_names contains duplicates")
        seen: set[str] = set()
        for rec in self.records:
            if rec.id in seen:
                raise ManifestError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def by_id(self, rec_id: str) -> ImageRecord:
        try:
            return self._index[rec_id]
        except KeyError:
            raise ManifestError(f"unknown record id {rec_id!r}") from None

    @property
    def _index(self) -> dict[str, ImageRecord]:
        idx = getattr(self, "_index_cache", None)
        if idx is None:
            idx = {r.id: r for r in self.records}
            object.__setattr__(self, "_index_cache", idx)
        return idx

    def subset(self, ids) -> tuple[ImageRecord, ...]:
        return tuple(self.by_id(i) for i in ids)

    def split_records(self, split: str) -> tuple[ImageRecord, ...]:
        if split not in SPLITS:
            raise ManifestError(f"invalid split {split!r}")
        return tuple(r for r in self.records if r.split == split)

    def resolve(self, rel_path: str) -> Path:
        """Resolve a record path against the loading directory."""
        p = Path(rel_path)
        if p.is_absolute() or self.base_dir is None:
            return p
        return self.base_dir / p


def _record_from_obj(obj: dict, line_no: int) -> ImageRecord:
    try:
        scenario = ScenarioTag(
            weather=obj.get("weather", "unknown"),
            time=obj.get("time", "unknown"),
            road_type=obj.get("road_type", "unknown"),
        )
        return ImageRecord(
            id=obj["id"],
            image_path=obj["image"],
            label_path=obj.get("label"),
            scenario=scenario,
            split=obj["split"],
        )
    except KeyError as e:
        raise ManifestError(f"missing required field {e.args[0]!r}", line=line_no) from None
    except ManifestError as e:
        raise ManifestError(str(e), line=line_no) from None


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a manifest file; any invariant violation is rejected here."""
    path = Path(path)
    records: list[ImageRecord] = []
    class_names: tuple[str, ...] | None = None
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"invalid JSON: {e.msg}", line=line_no) from None
            if line_no == 1:
                if not isinstance(obj, dict) or obj.get("format") != FORMAT_VERSION:
                    raise ManifestError(
                        f"expected header with format {FORMAT_VERSION!r}", line=1
                    )
                classes = obj.get("classes")
                if not isinstance(classes, list) or not classes:
                    raise ManifestError("header must carry a non-empty class list", line=1)
                class_names = tuple(classes)
                continue
            rec = _record_from_obj(obj, line_no)
            if rec.id in seen_ids:
                raise ManifestError(f"duplicate record id {rec.id!r}", line=line_no)
            seen_ids.add(rec.id)
            records.append(rec)
    if class_names is None:
        raise ManifestError("empty file: missing header", line=1)
    return DatasetManifest(
        records=tuple(records), class_names=class_names, base_dir=path.parent
    )


def _record_obj(rec: ImageRecord) -> dict:
    obj = {"id": rec.id, "image": rec.image_path}
    if rec.label_path is not None:
        obj["label"] = rec.label_path
    obj["weather"] = rec.scenario.weather
    obj["time"] = rec.scenario.time
    obj["road_type"] = rec.scenario.road_type
    obj["split"] = rec.split
    return obj


def _dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def save_manifest(m: DatasetManifest, path: str | Path) -> None:
    """Write the canonical line format: fixed key order, compact separators."""
    header = {"format": FORMAT_VERSION, "classes": list(m.class_names)}
    lines = [_dumps(header)]
    lines.extend(_dumps(_record_obj(r)) for r in m.records)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def split_counts(m: DatasetManifest) -> dict[str, int]:
    """Record count per split; counts always sum to len(m)."""
    counts = {s: 0 for s in SPLITS}
    for rec in m.records:
        counts[rec.split] += 1
    return counts


def with_records(m: DatasetManifest, records) -> DatasetManifest:
    """New manifest with the same class list; manifests are never mutated in place."""
    return replace(m, records=tuple(records))
