"""Annotation-subset draws and scenario-imbalance diagnostics.

Two samplers: the cluster-balanced draw (uniform per cluster, refilled from the
largest remainders when clusters run short) and the plain random baseline.
Imbalance is quantified as KL(subset scenario density, uniform over the
scenario values present in the source manifest).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cluster import ClusterModel
from .errors import EdsError, ManifestError, PoolError
from .manifest import SCENARIO_AXES, DatasetManifest

SUBSET_FORMAT = "eds-subset/1"

Provenance = int | str  # cluster index, or "random"


@dataclass(frozen=True)
class SampledSubset:
    ids: tuple[str, ...]
    provenance: dict[str, Provenance]
    seed: int
    target_size: int
    method: str

    def __post_init__(self):
        if len(set(self.ids)) != len(self.ids):
            raise EdsError("sampled ids are not unique")
        if len(self.ids) > self.target_size:
            raise EdsError(
                f"sampled {len(self.ids)} ids for target {self.target_size}"
            )

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class ScenarioDensity:
    axis: str
    density: dict[str, float]

    def __post_init__(self):
        if self.axis not in SCENARIO_AXES:
            raise ValueError(f"unknown scenario axis {self.axis!r}")
        total = sum(self.density.values())
        if any(v < 0 for v in self.density.values()):
            raise ValueError("density values must be nonnegative")
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"density must sum to 1, got {total}")


def eds_sample(model: ClusterModel, n: int, seed: int = 0) -> SampledSubset:
    """Draw up to n ids uniformly without replacement from every cluster.

    Clusters smaller than n produce a shortfall, refilled one id at a time from
    the cluster with the most unsampled members (ties to the lowest cluster
    index) until n*k ids are drawn or the pool is exhausted.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    members = model.members()
    target = n * model.k
    chosen: list[str] = []
    provenance: dict[str, Provenance] = {}
    remaining: list[list[str]] = []
    for ci, ids in enumerate(members):
        take = min(n, len(ids))
        picked = rng.choice(len(ids), size=take, replace=False) if take else []
        picked_set = set(int(p) for p in picked)
        for p in picked:
            chosen.append(ids[int(p)])
            provenance[ids[int(p)]] = ci
        remaining.append([x for i, x in enumerate(ids) if i not in picked_set])
    pool = sum(len(ids) for ids in members)
    while len(chosen) < min(target, pool):
        ci = max(range(model.k), key=lambda j: (len(remaining[j]), -j))
        bucket = remaining[ci]
        p = int(rng.integers(len(bucket)))
        rec_id = bucket.pop(p)
        chosen.append(rec_id)
        provenance[rec_id] = ci
    return SampledSubset(
        ids=tuple(chosen), provenance=provenance, seed=seed,
        target_size=target, method="eds",
    )


def random_sample(
    m: DatasetManifest,
    size: int,
    seed: int = 0,
    splits: tuple[str, ...] | None = None,
) -> SampledSubset:
    """Uniform draw without replacement over the configured record pool."""
    pool = m.records if splits is None else tuple(
        r for r in m.records if r.split in splits
    )
    if size > len(pool):
        raise PoolError(f"requested {size} ids from a pool of {len(pool)}")
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(pool), size=size, replace=False)
    ids = tuple(pool[int(p)].id for p in picked)
    return SampledSubset(
        ids=ids, provenance={i: "random" for i in ids}, seed=seed,
        target_size=size, method="random",
    )


def density_estimate(
    subset: SampledSubset, m: DatasetManifest, axis: str
) -> ScenarioDensity:
    """Normalized frequency of each axis value among the sampled records.

    The support is every value present in the full manifest, so values the
    subset missed show up explicitly as zero mass.
    """
    if axis not in SCENARIO_AXES:
        raise ValueError(f"unknown scenario axis {axis!r}")
    if not subset.ids:
        raise EdsError("cannot estimate a density from an empty subset")
    support = sorted({r.scenario.axis_value(axis) for r in m.records})
    counts = {v: 0 for v in support}
    for rec_id in subset.ids:
        rec = m.by_id(rec_id)  # raises ManifestError for unresolvable ids
        counts[rec.scenario.axis_value(axis)] += 1
    total = len(subset.ids)
    return ScenarioDensity(
        axis=axis, density={v: counts[v] / total for v in support}
    )


def kl_to_uniform(d: ScenarioDensity) -> float:
    """KL(p, uniform) in nats over the density's support; zero mass contributes 0."""
    support = len(d.density)
    u = 1.0 / support
    return sum(p * math.log(p / u) for p in d.density.values() if p > 0.0)


def save_subset(subset: SampledSubset, m: DatasetManifest, path: str | Path) -> None:
    """Manifest-fragment file: full record lines plus a provenance column."""
    header = {
        "format": SUBSET_FORMAT,
        "method": subset.method,
        "seed": subset.seed,
        "target_size": subset.target_size,
        "classes": list(m.class_names),
    }
    lines = [json.dumps(header, separators=(",", ":"))]
    for rec_id in subset.ids:
        rec = m.by_id(rec_id)
        obj = {"id": rec.id, "image": rec.image_path}
        if rec.label_path is not None:
            obj["label"] = rec.label_path
        obj["weather"] = rec.scenario.weather
        obj["time"] = rec.scenario.time
        obj["road_type"] = rec.scenario.road_type
        obj["split"] = rec.split
        obj["provenance"] = subset.provenance[rec_id]
        lines.append(json.dumps(obj, separators=(",", ":"), ensure_ascii=False))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_subset(path: str | Path) -> SampledSubset:
    with open(path, encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln]
    if not lines:
        raise ManifestError("empty subset file", line=1)
    header = json.loads(lines[0])
    if header.get("format") != SUBSET_FORMAT:
        raise ManifestError(f"expected header with format {SUBSET_FORMAT!r}", line=1)
    ids: list[str] = []
    provenance: dict[str, Provenance] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        obj = json.loads(line)
        try:
            ids.append(obj["id"])
            provenance[obj["id"]] = obj["provenance"]
        except KeyError as e:
            raise ManifestError(f"missing field {e.args[0]!r}", line=line_no) from None
    return SampledSubset(
        ids=tuple(ids),
        provenance=provenance,
        seed=header.get("seed", 0),
        target_size=header.get("target_size", len(ids)),
        method=header.get("method", "unknown"),
    )
