"""End-to-end experiments: sample a budget, train, pseudo-label, retrain, evaluate.

Each experiment is a pure function of (corpus, config): per-seed work is
isolated, reports are canonically serialized, and rerunning with the same
config and seeds reproduces the report byte for byte. Wall-clock time is kept
on the in-memory report only; it never enters the serialized form, which would
otherwise break rerun identity.
"""

from __future__ import annotations

import json
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .cluster import ClusterModel, kmeans_fit
from .embed import EmbeddingSet, RoiSpec, encode_images
from .errors import EdsError
from .manifest import SCENARIO_AXES, DatasetManifest, ImageRecord
from .sampler import (
    SampledSubset,
    density_estimate,
    eds_sample,
    kl_to_uniform,
    random_sample,
)
from .segmodel import Hyperparams, SegModel, evaluate, pixel_features, pseudo_label, train
from .synth import Corpus

SAMPLERS = ("eds", "random")


@dataclass(frozen=True)
class ExperimentConfig:
    sampler: str = "eds"
    labeled_budget: int = 300
    pseudo_budget: int = 0
    k: int = 20
    seeds: tuple[int, ...] = (0,)
    teacher_hp: Hyperparams = Hyperparams()
    student_hp: Hyperparams = Hyperparams()
    roi: RoiSpec = RoiSpec()
    grid: int = 4
    kmeans_restarts: int = 3
    kmeans_max_iter: int = 50
    kmeans_tol: float = 1e-4
    compare_axis: str = "weather"

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.labeled_budget < 1:
            raise ValueError("labeled_budget must be >= 1")
        if self.pseudo_budget < 0:
            raise ValueError("pseudo_budget must be >= 0")
        if self.compare_axis not in SCENARIO_AXES:
            raise ValueError(f"unknown scenario axis {self.compare_axis!r}")


@dataclass(frozen=True)
class SeedResult:
    seed: int
    sampler: str
    subset_size: int
    kl: dict[str, float]
    teacher_miou: float
    teacher_per_class: dict[str, float | None]
    teacher_epochs: int
    pseudo_count: int = 0
    student_miou: float | None = None
    student_per_class: dict[str, float | None] | None = None
    student_epochs: int | None = None


@dataclass(frozen=True)
class ExperimentReport:
    mode: str
    config: dict
    results: tuple[SeedResult, ...]
    teacher_miou_median: float
    student_miou_median: float | None
    pseudo_counts: tuple[int, ...]
    wall_clock_sec: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "config": self.config,
            "results": [asdict(r) for r in self.results],
            "teacher_miou_median": self.teacher_miou_median,
            "student_miou_median": self.student_miou_median,
            "pseudo_counts": list(self.pseudo_counts),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"


def _config_echo(cfg: ExperimentConfig) -> dict:
    echo = asdict(cfg)
    echo["seeds"] = list(cfg.seeds)
    return echo


def _pool_records(m: DatasetManifest, split: str) -> tuple[ImageRecord, ...]:
    records = m.split_records(split)
    if not records:
        raise EdsError(f"manifest has no records in split {split!r}")
    return records


def _pool_embeddings(corpus: Corpus, records, cfg: ExperimentConfig) -> EmbeddingSet:
    idxs = [corpus.index_of(r.id) for r in records]
    return encode_images(corpus.images[idxs], [r.id for r in records], cfg.roi, cfg.grid)


def _fit_pool_clusters(embs: EmbeddingSet, cfg: ExperimentConfig, seed: int) -> ClusterModel:
    return kmeans_fit(
        embs, cfg.k, max_iter=cfg.kmeans_max_iter, tol=cfg.kmeans_tol,
        seed=seed, restarts=cfg.kmeans_restarts,
    )


def _select(
    cfg: ExperimentConfig,
    manifest: DatasetManifest,
    split: str,
    budget: int,
    embs: EmbeddingSet | None,
    seed: int,
) -> SampledSubset:
    pool = len(manifest.split_records(split))
    if cfg.sampler == "random":
        return random_sample(manifest, min(budget, pool), seed=seed, splits=(split,))
    if budget >= pool:
        # refill exhausts the pool exactly, so divisibility is irrelevant
        n = -(-pool // cfg.k)
    elif budget % cfg.k:
        raise EdsError(
            f"budget {budget} is not a multiple of k={cfg.k}; "
            "per-cluster draws need an integral n"
        )
    else:
        n = budget // cfg.k
    model = _fit_pool_clusters(embs, cfg, seed)
    return eds_sample(model, n, seed=seed)


def _kl_diagnostics(subset: SampledSubset, m: DatasetManifest) -> dict[str, float]:
    return {
        axis: kl_to_uniform(density_estimate(subset, m, axis))
        for axis in SCENARIO_AXES
    }


def _dataset_for(corpus: Corpus, features: list[np.ndarray], ids) -> list:
    return [
        (features[corpus.index_of(i)], corpus.masks[corpus.index_of(i)]) for i in ids
    ]


def _named_per_class(report_per_class: dict[int, float | None], names) -> dict:
    return {names[c]: v for c, v in report_per_class.items()}


class _Runner:
    """Per-corpus state shared across seeds; heavy caches build lazily.

    Pickling for worker fan-out carries only the corpus and config; features,
    validation/test datasets, and pool embeddings are rebuilt once per process.
    """

    def __init__(self, corpus: Corpus, cfg: ExperimentConfig):
        self.corpus = corpus
        self.cfg = cfg
        self.manifest = corpus.manifest
        self._cache: dict = {}

    def __getstate__(self):
        return {"corpus": self.corpus, "cfg": self.cfg}

    def __setstate__(self, state):
        self.__init__(state["corpus"], state["cfg"])

    @property
    def features(self) -> list:
        if "features" not in self._cache:
            self._cache["features"] = [pixel_features(img) for img in self.corpus.images]
        return self._cache["features"]

    @property
    def val_set(self) -> list:
        if "val" not in self._cache:
            self._cache["val"] = self._split_dataset("val")
        return self._cache["val"]

    @property
    def test_set(self) -> list:
        if "test" not in self._cache:
            self._cache["test"] = self._split_dataset("test")
        return self._cache["test"]

    def _split_dataset(self, split: str) -> list:
        records = _pool_records(self.manifest, split)
        return _dataset_for(self.corpus, self.features, [r.id for r in records])

    def embeddings_for(self, split: str) -> EmbeddingSet:
        key = ("emb", split)
        if key not in self._cache:
            records = _pool_records(self.manifest, split)
            self._cache[key] = _pool_embeddings(self.corpus, records, self.cfg)
        return self._cache[key]

    def select_labeled(self, seed: int) -> SampledSubset:
        embs = self.embeddings_for("labeled-train") if self.cfg.sampler == "eds" else None
        return _select(
            self.cfg, self.manifest, "labeled-train", self.cfg.labeled_budget, embs, seed
        )

    def train_teacher(self, subset: SampledSubset, seed: int):
        hp = replace(self.cfg.teacher_hp, seed=seed)
        data = _dataset_for(self.corpus, self.features, subset.ids)
        model = SegModel.zeros(self.manifest.num_classes)
        return train(model, data, hp, val_data=self.val_set)

    def select_pseudo(self, budget: int, seed: int) -> SampledSubset:
        embs = self.embeddings_for("unlabeled") if self.cfg.sampler == "eds" else None
        return _select(self.cfg, self.manifest, "unlabeled", budget, embs, seed)

    def train_student(
        self, real: SampledSubset, pseudo_ids, teacher: SegModel, seed: int
    ):
        hp = replace(self.cfg.student_hp, seed=seed)
        data = _dataset_for(self.corpus, self.features, real.ids)
        for rec_id in pseudo_ids:
            feats = self.features[self.corpus.index_of(rec_id)]
            data.append((feats, pseudo_label(teacher, feats)))
        model = SegModel.zeros(self.manifest.num_classes)
        return train(model, data, hp, val_data=self.val_set)

    def test_report(self, model: SegModel):
        return evaluate(model, self.test_set)


def _supervised_seed(runner: _Runner, seed: int) -> SeedResult:
    subset = runner.select_labeled(seed)
    teacher, trace = runner.train_teacher(subset, seed)
    report = runner.test_report(teacher)
    names = runner.manifest.class_names
    return SeedResult(
        seed=seed,
        sampler=runner.cfg.sampler,
        subset_size=len(subset),
        kl=_kl_diagnostics(subset, runner.manifest),
        teacher_miou=report.miou,
        teacher_per_class=_named_per_class(report.per_class, names),
        teacher_epochs=len(trace),
    )


def _self_training_seed(runner: _Runner, seed: int) -> SeedResult:
    cfg = runner.cfg
    subset = runner.select_labeled(seed)
    teacher, t_trace = runner.train_teacher(subset, seed)
    t_report = runner.test_report(teacher)

    pseudo_ids: tuple[str, ...] = ()
    if cfg.pseudo_budget > 0:
        pseudo_subset = runner.select_pseudo(cfg.pseudo_budget, seed)
        pseudo_ids = pseudo_subset.ids
    student, s_trace = runner.train_student(subset, pseudo_ids, teacher, seed)
    s_report = runner.test_report(student)
    names = runner.manifest.class_names
    return SeedResult(
        seed=seed,
        sampler=cfg.sampler,
        subset_size=len(subset),
        kl=_kl_diagnostics(subset, runner.manifest),
        teacher_miou=t_report.miou,
        teacher_per_class=_named_per_class(t_report.per_class, names),
        teacher_epochs=len(t_trace),
        pseudo_count=len(pseudo_ids),
        student_miou=s_report.miou,
        student_per_class=_named_per_class(s_report.per_class, names),
        student_epochs=len(s_trace),
    )


def _pool(jobs: int) -> ProcessPoolExecutor:
    # spawn, not fork: the numba threading runtime does not survive a fork
    return ProcessPoolExecutor(
        max_workers=jobs, mp_context=multiprocessing.get_context("spawn")
    )


def _run_seeds(runner: _Runner, fn, seeds, jobs: int):
    if jobs > 1:
        with _pool(jobs) as pool:
            return list(pool.map(_SeedTask(runner, fn), seeds))
    return [fn(runner, s) for s in seeds]


class _SeedTask:
    """Picklable wrapper so seed jobs can fan out across processes."""

    def __init__(self, runner: _Runner, fn):
        self.runner = runner
        self.fn = fn

    def __call__(self, seed: int):
        return self.fn(self.runner, seed)


def _finish(mode, cfg, results, started) -> ExperimentReport:
    student_mious = [r.student_miou for r in results if r.student_miou is not None]
    return ExperimentReport(
        mode=mode,
        config=_config_echo(cfg),
        results=tuple(results),
        teacher_miou_median=float(np.median([r.teacher_miou for r in results])),
        student_miou_median=float(np.median(student_mious)) if student_mious else None,
        pseudo_counts=tuple(r.pseudo_count for r in results),
        wall_clock_sec=time.perf_counter() - started,
    )


def run_supervised(corpus: Corpus, cfg: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    """Sample a labeled budget, train one model per seed, evaluate on the test split."""
    started = time.perf_counter()
    runner = _Runner(corpus, cfg)
    results = _run_seeds(runner, _supervised_seed, cfg.seeds, jobs)
    return _finish("supervised", cfg, results, started)


def run_self_training(corpus: Corpus, cfg: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    """Teacher on the labeled budget, pseudo-labels on the unlabeled pool, student on both."""
    started = time.perf_counter()
    runner = _Runner(corpus, cfg)
    results = _run_seeds(runner, _self_training_seed, cfg.seeds, jobs)
    return _finish("self-training", cfg, results, started)


def _ladder_seed(runner: _Runner, rungs: tuple[int, ...], seed: int) -> list[SeedResult]:
    cfg = runner.cfg
    names = runner.manifest.class_names
    subset = runner.select_labeled(seed)
    teacher, t_trace = runner.train_teacher(subset, seed)
    t_report = runner.test_report(teacher)
    kl = _kl_diagnostics(subset, runner.manifest)
    rows = []
    for rung in rungs:
        pseudo_ids = runner.select_pseudo(rung, seed).ids if rung > 0 else ()
        student, s_trace = runner.train_student(subset, pseudo_ids, teacher, seed)
        s_report = runner.test_report(student)
        rows.append(
            SeedResult(
                seed=seed,
                sampler=cfg.sampler,
                subset_size=len(subset),
                kl=kl,
                teacher_miou=t_report.miou,
                teacher_per_class=_named_per_class(t_report.per_class, names),
                teacher_epochs=len(t_trace),
                pseudo_count=len(pseudo_ids),
                student_miou=s_report.miou,
                student_per_class=_named_per_class(s_report.per_class, names),
                student_epochs=len(s_trace),
            )
        )
    return rows


class _LadderTask:
    def __init__(self, runner: _Runner, rungs: tuple[int, ...]):
        self.runner = runner
        self.rungs = rungs

    def __call__(self, seed: int):
        return _ladder_seed(self.runner, self.rungs, seed)


def run_ladder(
    corpus: Corpus, cfg: ExperimentConfig, rungs: tuple[int, ...], jobs: int = 1
) -> dict[int, ExperimentReport]:
    """Self-training at several pseudo budgets, sharing teachers across rungs.

    The unlabeled-pool cluster model and the per-seed teacher depend only on
    the labeled subset, so each rung reuses them; only pseudo selection and
    student training rerun.
    """
    started = time.perf_counter()
    runner = _Runner(corpus, cfg)
    if jobs > 1:
        with _pool(jobs) as pool:
            per_seed = list(pool.map(_LadderTask(runner, rungs), cfg.seeds))
    else:
        per_seed = [_ladder_seed(runner, rungs, s) for s in cfg.seeds]
    reports = {}
    for ri, rung in enumerate(rungs):
        rows = [rows[ri] for rows in per_seed]
        reports[rung] = _finish(
            "self-training", replace(cfg, pseudo_budget=rung), rows, started
        )
    return reports


@dataclass(frozen=True)
class SamplerTrial:
    trial: int
    seed: int
    kl_eds: dict[str, float]
    kl_random: dict[str, float]
    densities_eds: dict[str, dict[str, float]]
    densities_random: dict[str, dict[str, float]]
    miou_eds: float | None = None
    miou_random: float | None = None


@dataclass(frozen=True)
class SamplerComparison:
    subset_size: int
    axis: str
    trials: tuple[SamplerTrial, ...]
    kl_eds_median: float
    kl_random_median: float
    eds_win_fraction: float
    wall_clock_sec: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return {
            "subset_size": self.subset_size,
            "axis": self.axis,
            "trials": [asdict(t) for t in self.trials],
            "kl_eds_median": self.kl_eds_median,
            "kl_random_median": self.kl_random_median,
            "eds_win_fraction": self.eds_win_fraction,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"


def compare_samplers(
    corpus: Corpus,
    cfg: ExperimentConfig,
    trials: int,
    subset_size: int,
    include_miou: bool = False,
) -> SamplerComparison:
    """Paired cluster-balanced vs random subsets of the whole corpus per trial.

    Reports per-axis densities and KL values for both methods; the win fraction
    counts trials where the balanced draw has strictly lower KL on the
    comparison axis. Model training per trial is optional and off by default.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    started = time.perf_counter()
    m = corpus.manifest
    if subset_size % cfg.k:
        raise EdsError(f"subset size {subset_size} is not a multiple of k={cfg.k}")
    embs = encode_images(
        corpus.images, [r.id for r in m.records], cfg.roi, cfg.grid
    )
    runner = _Runner(corpus, cfg) if include_miou else None

    rows = []
    wins = 0
    base = cfg.seeds[0]
    for t in range(trials):
        seed = base + t
        model = _fit_pool_clusters(embs, cfg, seed)
        sub_eds = eds_sample(model, subset_size // cfg.k, seed=seed)
        sub_rand = random_sample(m, subset_size, seed=seed)
        dens_e = {a: density_estimate(sub_eds, m, a) for a in SCENARIO_AXES}
        dens_r = {a: density_estimate(sub_rand, m, a) for a in SCENARIO_AXES}
        kl_e = {a: kl_to_uniform(d) for a, d in dens_e.items()}
        kl_r = {a: kl_to_uniform(d) for a, d in dens_r.items()}
        miou_e = miou_r = None
        if include_miou:
            teacher_e, _ = runner.train_teacher(sub_eds, seed)
            teacher_r, _ = runner.train_teacher(sub_rand, seed)
            miou_e = runner.test_report(teacher_e).miou
            miou_r = runner.test_report(teacher_r).miou
        if kl_e[cfg.compare_axis] < kl_r[cfg.compare_axis]:
            wins += 1
        rows.append(
            SamplerTrial(
                trial=t,
                seed=seed,
                kl_eds=kl_e,
                kl_random=kl_r,
                densities_eds={a: d.density for a, d in dens_e.items()},
                densities_random={a: d.density for a, d in dens_r.items()},
                miou_eds=miou_e,
                miou_random=miou_r,
            )
        )
    axis = cfg.compare_axis
    return SamplerComparison(
        subset_size=subset_size,
        axis=axis,
        trials=tuple(rows),
        kl_eds_median=float(np.median([r.kl_eds[axis] for r in rows])),
        kl_random_median=float(np.median([r.kl_random[axis] for r in rows])),
        eds_win_fraction=wins / trials,
        wall_clock_sec=time.perf_counter() - started,
    )


def save_report(report, path: str | Path) -> None:
    Path(path).write_text(report.to_json(), encoding="utf-8")


def report_csv(report: ExperimentReport) -> str:
    """Per-seed evaluation table: one row per model, one column per class plus the mean."""
    names = None
    for r in report.results:
        names = list(r.teacher_per_class)
        break
    header = ["sampler", "seed", "model", "pseudo_count", *names, "miou"]
    lines = [",".join(header)]

    def fmt(v):
        return "" if v is None else f"{v:.6f}"

    for r in report.results:
        row = [r.sampler, str(r.seed), "teacher", "0"]
        row += [fmt(r.teacher_per_class[n]) for n in names]
        row.append(fmt(r.teacher_miou))
        lines.append(",".join(row))
        if r.student_miou is not None:
            row = [r.sampler, str(r.seed), "student", str(r.pseudo_count)]
            row += [fmt(r.student_per_class[n]) for n in names]
            row.append(fmt(r.student_miou))
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def density_table(comparison: SamplerComparison) -> str:
    """Plot-ready value table: per-axis densities for both samplers, medianed over trials."""
    lines = ["axis,value,eds_density,random_density,uniform"]
    axes: dict[str, list[str]] = {}
    for trial in comparison.trials:
        for axis, dens in trial.densities_eds.items():
            axes.setdefault(axis, sorted(dens))
    for axis, values in axes.items():
        u = 1.0 / len(values)
        for v in values:
            e = float(np.median([t.densities_eds[axis][v] for t in comparison.trials]))
            r = float(np.median([t.densities_random[axis][v] for t in comparison.trials]))
            lines.append(f"{axis},{v},{e:.6f},{r:.6f},{u:.6f}")
    return "\n".join(lines) + "\n"
