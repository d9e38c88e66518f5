"""K-means over embedding sets: k-means++ seeding, Lloyd iterations, EDSC IO.

Determinism contract: fitting is a pure function of (embeddings, k, seed,
max_iter, tol, restarts). Points are processed in id-sorted canonical order, so
the ordering of the input file never changes the result.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .embed import Embedding, EmbeddingSet
from .errors import DimensionError, FormatError

EDSC_MAGIC = b"EDSC"
EDSC_VERSION = 1
DEFAULT_K = 300
DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-4


@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: np.ndarray  # (k, d) float64
    assignments: dict[str, int]
    inertia: float
    inertia_trace: tuple[float, ...] = field(default=(), compare=False)
    n_iter: int = field(default=0, compare=False)

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def members(self) -> list[list[str]]:
        """Cluster member ids, id-sorted within each cluster."""
        out: list[list[str]] = [[] for _ in range(self.k)]
        for rec_id in sorted(self.assignments):
            out[self.assignments[rec_id]].append(rec_id)
        return out


def _sq_dists_to(X: np.ndarray, point: np.ndarray) -> np.ndarray:
    diff = X - point
    return np.einsum("ij,ij->i", diff, diff)


def _kmeanspp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = X[first]
    closest = _sq_dists_to(X, centroids[0])
    for j in range(1, k):
        total = closest.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # all remaining mass sits on already-chosen points
            idx = int(rng.integers(n))
        centroids[j] = X[idx]
        np.minimum(closest, _sq_dists_to(X, centroids[j]), out=closest)
    return centroids


def _repair_empty(labels: np.ndarray, sqd: np.ndarray, counts: np.ndarray) -> None:
    """Give each empty cluster the point farthest from its assigned centroid.

    Donors must keep at least one member; ties pick the lowest point index.
    """
    sqd = sqd.copy()
    for j in np.flatnonzero(counts == 0):
        eligible = counts[labels] > 1
        if not eligible.any():
            break
        masked = np.where(eligible, sqd, -1.0)
        p = int(np.argmax(masked))
        counts[labels[p]] -= 1
        labels[p] = j
        counts[j] += 1
        sqd[p] = 0.0


_REFINE_SWEEPS = 100


def _lloyd(X: np.ndarray, centroids: np.ndarray, max_iter: int, tol: float):
    k = centroids.shape[0]
    trace: list[float] = []
    labels = np.zeros(X.shape[0], dtype=np.int64)
    for it in range(max_iter):
        labels, sqd = _kernels.assign_labels(X, centroids)
        sums, counts = _kernels.centroid_sums(X, labels, k)
        if (counts == 0).any():
            _repair_empty(labels, sqd, counts)
            sums, counts = _kernels.centroid_sums(X, labels, k)
        new_centroids = sums / counts[:, None]
        inertia = float(((X - new_centroids[labels]) ** 2).sum())
        trace.append(inertia)
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        if shift < tol:
            break
    # single-point refinement: escapes Lloyd-stationary splits that are not
    # locally optimal under individual reassignments
    sums, counts = _kernels.centroid_sums(X, labels, k)
    refined = False
    for _ in range(_REFINE_SWEEPS):
        if _kernels.hartigan_sweep(X, labels, sums, counts) == 0:
            break
        refined = True
    if refined:
        sums, counts = _kernels.centroid_sums(X, labels, k)
        centroids = sums / counts[:, None]
        trace.append(float(((X - centroids[labels]) ** 2).sum()))
    return centroids, labels, trace


def kmeans_fit(
    s: EmbeddingSet,
    k: int,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    restarts: int = 1,
) -> ClusterModel:
    """Fit k clusters; with restarts > 1, keep the lowest-inertia run.

    Restart r uses seed + r, so a restart sweep is itself reproducible.
    """
    n = len(s)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    if tol < 0:
        raise ValueError(f"tol must be >= 0, got {tol}")
    if restarts < 1:
        raise ValueError(f"restarts must be >= 1, got {restarts}")
    order = sorted(range(n), key=lambda i: s.ids[i])
    ids = [s.ids[i] for i in order]
    X = np.ascontiguousarray(s.values[order], dtype=np.float64)
    if not np.isfinite(X).all():
        raise ValueError("embeddings contain non-finite values")

    best: tuple[np.ndarray, np.ndarray, list[float]] | None = None
    for r in range(restarts):
        rng = np.random.default_rng(seed + r)
        init = _kmeanspp_init(X, k, rng)
        centroids, labels, trace = _lloyd(X, init, max_iter, tol)
        if best is None or trace[-1] < best[2][-1]:
            best = (centroids, labels, trace)
    centroids, labels, trace = best
    return ClusterModel(
        k=k,
        centroids=centroids,
        assignments={rec_id: int(lbl) for rec_id, lbl in zip(ids, labels)},
        inertia=trace[-1],
        inertia_trace=tuple(trace),
        n_iter=len(trace),
    )


def assign(model: ClusterModel, e: Embedding) -> int:
    """Nearest centroid in squared Euclidean distance; ties take the lowest index."""
    values = np.asarray(e.values, dtype=np.float64)
    if values.shape != (model.dim,):
        raise DimensionError(
            f"embedding has dimension {values.shape}, model expects ({model.dim},)"
        )
    d2 = ((model.centroids - values) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def inertia_trace(model: ClusterModel) -> tuple[float, ...]:
    """Per-iteration inertia of the winning fit; non-increasing by construction."""
    return model.inertia_trace


def save_cluster_model(model: ClusterModel, path: str | Path) -> None:
    """EDSC sidecar: magic, version u32, k u64, d u64, inertia f64,
    k*d f64 centroids, count u64, then (u32 len, UTF-8 id, u32 index) entries."""
    with open(path, "wb") as f:
        f.write(EDSC_MAGIC)
        f.write(struct.pack("<IQQd", EDSC_VERSION, model.k, model.dim, model.inertia))
        f.write(np.ascontiguousarray(model.centroids, dtype="<f8").tobytes())
        f.write(struct.pack("<Q", len(model.assignments)))
        for rec_id in sorted(model.assignments):
            raw = rec_id.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", model.assignments[rec_id]))


def load_cluster_model(path: str | Path) -> ClusterModel:
    data = Path(path).read_bytes()
    if data[:4] != EDSC_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}, expected {EDSC_MAGIC!r}")
    if len(data) < 32:
        raise FormatError(f"{path}: truncated header")
    version, k, dim, inertia = struct.unpack_from("<IQQd", data, 4)
    if version != EDSC_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    pos = 32
    payload = k * dim * 8
    if len(data) < pos + payload + 8:
        raise FormatError(f"{path}: truncated centroid block")
    centroids = (
        np.frombuffer(data[pos:pos + payload], dtype="<f8").reshape(k, dim).copy()
    )
    pos += payload
    (count,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    assignments: dict[str, int] = {}
    for _ in range(count):
        if len(data) < pos + 4:
            raise FormatError(f"{path}: truncated assignment table")
        (length,) = struct.unpack_from("<I", data, pos)
        pos += 4
        if len(data) < pos + length + 4:
            raise FormatError(f"{path}: truncated assignment table")
        rec_id = data[pos:pos + length].decode("utf-8")
        pos += length
        (idx,) = struct.unpack_from("<I", data, pos)
        pos += 4
        assignments[rec_id] = idx
    return ClusterModel(k=k, centroids=centroids, assignments=assignments, inertia=inertia)
