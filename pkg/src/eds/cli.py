"""Command-line surface: one subcommand per pipeline stage.

Every subcommand is deterministic for fixed flags and seed, so reruns produce
byte-identical output files. `--seed` falls back to the EDS_SEED environment
variable. Validation failures exit 1 with a single parsable line on stderr;
usage errors exit 2.
"""

from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path

import click

from . import __version__
from ._kernels import BACKEND
from .cluster import kmeans_fit, load_cluster_model, save_cluster_model
from .embed import (
    DEFAULT_BOTTOM_FRACTION,
    DEFAULT_GRID,
    RoiSpec,
    encode_records,
    read_embeddings,
    standardize,
    write_embeddings,
)
from .errors import EdsError
from .manifest import (
    SPLITS,
    DatasetManifest,
    ImageRecord,
    load_manifest,
    save_manifest,
    with_records,
)
from .pipeline import (
    ExperimentConfig,
    compare_samplers,
    density_table,
    report_csv,
    run_ladder,
    run_self_training,
    run_supervised,
    save_report,
)
from .rasters import read_pgm, read_ppm, write_pgm
from .sampler import (
    density_estimate,
    eds_sample,
    kl_to_uniform,
    load_subset,
    random_sample,
    save_subset,
)
from .segmodel import (
    Hyperparams,
    SegModel,
    evaluate,
    load_model,
    pixel_features,
    pseudo_label,
    save_model,
    train,
)
from .synth import SynthSpec, generate, load_corpus, write_corpus


def _fail(message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (EdsError, ValueError, OSError) as e:
            _fail(str(e))

    return wrapper


seed_option = click.option(
    "--seed", type=int, default=0, envvar="EDS_SEED", show_default=True,
    help="RNG seed; EDS_SEED is used when the flag is absent.",
)


def hp_options(fn):
    opts = [
        click.option("--lr", type=float, default=0.002, show_default=True,
                     help="Base learning rate (training from scratch)."),
        click.option("--fine-tune", is_flag=True,
                     help="Use the fine-tuning learning rate 0.0001."),
        click.option("--momentum", type=float, default=0.9, show_default=True),
        click.option("--weight-decay", type=float, default=1e-4, show_default=True),
        click.option("--batch-size", type=int, default=8, show_default=True),
        click.option("--epochs", type=int, default=200, show_default=True),
        click.option("--patience", type=int, default=10, show_default=True),
        click.option("--poly-power", type=float, default=0.9, show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _hyperparams(lr, fine_tune, momentum, weight_decay, batch_size, epochs,
                 patience, poly_power, seed) -> Hyperparams:
    hp = Hyperparams(
        lr=lr, momentum=momentum, weight_decay=weight_decay, batch_size=batch_size,
        epochs=epochs, patience=patience, poly_power=poly_power, seed=seed,
    )
    return hp.fine_tune() if fine_tune else hp


@click.group()
@click.version_option(__version__, message=f"%(prog)s %(version)s (kernels: {BACKEND})")
def main():
    """Dataset curation and self-training pipeline for road-region segmentation."""


@main.command()
@click.option("--out", required=True, type=click.Path(), help="Corpus output directory.")
@click.option("--count", type=int, default=1000, show_default=True)
@click.option("--height", type=int, default=16, show_default=True)
@click.option("--width", type=int, default=16, show_default=True)
@click.option("--labeled-fraction", type=float, default=0.14, show_default=True)
@click.option("--val-fraction", type=float, default=0.1, show_default=True)
@click.option("--test-fraction", type=float, default=0.1, show_default=True)
@seed_option
@handle_errors
def synth(out, count, height, width, labeled_fraction, val_fraction, test_fraction, seed):
    """Generate a synthetic corpus with pixel-exact masks and a manifest."""
    spec = SynthSpec(
        height=height, width=width, corpus_size=count,
        labeled_fraction=labeled_fraction, val_fraction=val_fraction,
        test_fraction=test_fraction, seed=seed,
    )
    manifest_path = write_corpus(generate(spec), out)
    click.echo(f"wrote corpus of {count} images at {manifest_path}")


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--grid", type=int, default=DEFAULT_GRID, show_default=True,
              help="Grid cells per side; dimension is 3*grid^2.")
@click.option("--bottom-fraction", type=float, default=DEFAULT_BOTTOM_FRACTION,
              show_default=True, help="Image rows kept from the bottom for the ROI.")
@click.option("--split", type=click.Choice(("all",) + SPLITS), default="all",
              show_default=True, help="Record pool to embed.")
@click.option("--standardize", "do_standardize", is_flag=True,
              help="Per-dimension z-scoring of the embeddings.")
@handle_errors
def embed(manifest_path, out, grid, bottom_fraction, split, do_standardize):
    """Embed images through the ROI-crop grid encoder into an EDSE file."""
    m = load_manifest(manifest_path)
    records = m.records if split == "all" else m.split_records(split)
    embs = encode_records(m, records, RoiSpec(bottom_fraction), grid)
    if do_standardize:
        embs = standardize(embs)
    write_embeddings(embs, out)
    click.echo(f"wrote {len(embs)} embeddings of dimension {embs.dim} to {out}")


@main.command()
@click.option("--embeddings", "embeddings_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--k", type=int, default=300, show_default=True)
@click.option("--max-iter", type=int, default=100, show_default=True)
@click.option("--tol", type=float, default=1e-4, show_default=True)
@click.option("--restarts", type=int, default=1, show_default=True)
@seed_option
@handle_errors
def cluster(embeddings_path, out, k, max_iter, tol, restarts, seed):
    """Fit k-means on an EDSE file and write the EDSC cluster model."""
    embs = read_embeddings(embeddings_path)
    model = kmeans_fit(embs, k, max_iter=max_iter, tol=tol, seed=seed, restarts=restarts)
    save_cluster_model(model, out)
    click.echo(
        f"fit {model.k} clusters in {model.n_iter} iterations, inertia {model.inertia:.6g}"
    )


@main.command()
@click.option("--method", type=click.Choice(["eds", "random"]), required=True)
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True),
              help="Source manifest; sampled records are copied into the subset file.")
@click.option("--out", required=True, type=click.Path())
@click.option("--model", "model_path", type=click.Path(exists=True),
              help="EDSC cluster model (eds method).")
@click.option("--n", type=int, help="Per-cluster draw count (eds method).")
@click.option("--size", type=int, help="Subset size (random method).")
@click.option("--split", type=click.Choice(("all",) + SPLITS), default="all",
              show_default=True, help="Record pool (random method).")
@seed_option
@handle_errors
def sample(method, manifest_path, out, model_path, n, size, split, seed):
    """Draw an annotation subset with the cluster-balanced or random sampler."""
    m = load_manifest(manifest_path)
    if method == "eds":
        if model_path is None or n is None:
            raise EdsError("method eds requires --model and --n")
        subset = eds_sample(load_cluster_model(model_path), n, seed=seed)
    else:
        if size is None:
            raise EdsError("method random requires --size")
        splits = None if split == "all" else (split,)
        subset = random_sample(m, size, seed=seed, splits=splits)
    save_subset(subset, m, out)
    click.echo(f"sampled {len(subset)} ids ({method}) to {out}")


@main.command()
@click.option("--subset", "subset_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--plot", "plot_path", type=click.Path(),
              help="Also write a per-axis density value table (CSV).")
@handle_errors
def diagnose(subset_path, manifest_path, out, plot_path):
    """Report per-axis scenario densities and KL-to-uniform for a subset."""
    subset = load_subset(subset_path)
    m = load_manifest(manifest_path)
    axes = {}
    for axis in ("weather", "time", "road_type"):
        dens = density_estimate(subset, m, axis)
        axes[axis] = {"density": dens.density, "kl": kl_to_uniform(dens)}
    doc = {
        "method": subset.method,
        "seed": subset.seed,
        "size": len(subset),
        "axes": axes,
    }
    Path(out).write_text(
        json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )
    if plot_path:
        lines = ["axis,value,density,uniform"]
        for axis, info in axes.items():
            u = 1.0 / len(info["density"])
            for value, dens in info["density"].items():
                lines.append(f"{axis},{value},{dens:.6f},{u:.6f}")
        Path(plot_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    for axis, info in axes.items():
        click.echo(f"{axis}: KL to uniform = {info['kl']:.4f}")


def _labeled_dataset(m: DatasetManifest, records):
    data = []
    for rec in records:
        if rec.label_path is None:
            raise EdsError(f"record {rec.id!r} has no label to train on")
        img = read_ppm(m.resolve(rec.image_path))
        mask = read_pgm(m.resolve(rec.label_path))
        data.append((pixel_features(img), mask))
    return data


def _val_dataset(m: DatasetManifest):
    records = m.split_records("val")
    return _labeled_dataset(m, records) if records else None


@main.command("train-teacher")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--subset", "subset_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@hp_options
@seed_option
@handle_errors
def train_teacher(manifest_path, subset_path, out, seed, **hp_flags):
    """Train the teacher on a sampled labeled subset (early stop on the val split)."""
    m = load_manifest(manifest_path)
    subset = load_subset(subset_path)
    data = _labeled_dataset(m, m.subset(subset.ids))
    hp = _hyperparams(seed=seed, **hp_flags)
    model, trace = train(SegModel.zeros(m.num_classes), data, hp, val_data=_val_dataset(m))
    save_model(model, out)
    click.echo(f"trained {len(trace)} epochs, final loss {trace[-1]:.6f}; saved {out}")


@main.command("pseudo-label")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--subset", "subset_path", required=True, type=click.Path(exists=True),
              help="Subset of unlabeled ids to pseudo-label.")
@click.option("--out-dir", required=True, type=click.Path())
@handle_errors
def pseudo_label_cmd(model_path, manifest_path, subset_path, out_dir):
    """Write hard pseudo-label masks plus a manifest fragment for student training."""
    model = load_model(model_path)
    m = load_manifest(manifest_path)
    subset = load_subset(subset_path)
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for rec in m.subset(subset.ids):
        img = read_ppm(m.resolve(rec.image_path))
        mask = pseudo_label(model, pixel_features(img))
        mask_rel = f"masks/{rec.id}.pgm"
        write_pgm(out / mask_rel, mask)
        # image paths stay relative so the fragment tree is relocatable
        image_rel = os.path.relpath(m.resolve(rec.image_path), out)
        records.append(
            ImageRecord(
                id=rec.id,
                image_path=image_rel,
                label_path=mask_rel,
                scenario=rec.scenario,
                split="labeled-train",
            )
        )
    fragment = with_records(m, records)
    fragment_path = out / "pseudo-manifest.jsonl"
    save_manifest(fragment, fragment_path)
    click.echo(f"pseudo-labeled {len(records)} images; fragment at {fragment_path}")


@main.command("train-student")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--real-subset", "real_subset_path", required=True, type=click.Path(exists=True))
@click.option("--pseudo-manifest", "pseudo_manifest_path", type=click.Path(exists=True),
              help="Fragment written by pseudo-label; omit for a real-only student.")
@click.option("--out", required=True, type=click.Path())
@hp_options
@seed_option
@handle_errors
def train_student(manifest_path, real_subset_path, pseudo_manifest_path, out, seed, **hp_flags):
    """Train the student on the real subset plus pseudo-labeled images."""
    m = load_manifest(manifest_path)
    subset = load_subset(real_subset_path)
    data = _labeled_dataset(m, m.subset(subset.ids))
    if pseudo_manifest_path:
        pm = load_manifest(pseudo_manifest_path)
        data.extend(_labeled_dataset(pm, pm.records))
    hp = _hyperparams(seed=seed, **hp_flags)
    model, trace = train(SegModel.zeros(m.num_classes), data, hp, val_data=_val_dataset(m))
    save_model(model, out)
    click.echo(f"trained {len(trace)} epochs, final loss {trace[-1]:.6f}; saved {out}")


@main.command("evaluate")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--split", type=click.Choice(SPLITS), default="test", show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--csv", "csv_path", type=click.Path(), help="Also write a per-class CSV row.")
@handle_errors
def evaluate_cmd(model_path, manifest_path, split, out, csv_path):
    """Evaluate a checkpoint on a labeled split and report per-class IoU."""
    model = load_model(model_path)
    m = load_manifest(manifest_path)
    records = m.split_records(split)
    if not records:
        raise EdsError(f"manifest has no records in split {split!r}")
    report = evaluate(model, _labeled_dataset(m, records))
    per_class = {m.class_names[c]: v for c, v in report.per_class.items()}
    doc = {"split": split, "miou": report.miou, "per_class": per_class}
    Path(out).write_text(
        json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n", encoding="utf-8"
    )
    if csv_path:
        names = list(per_class)
        header = ["split", *names, "miou"]
        vals = [split] + [
            "" if per_class[n] is None else f"{per_class[n]:.6f}" for n in names
        ] + [f"{report.miou:.6f}"]
        Path(csv_path).write_text(
            ",".join(header) + "\n" + ",".join(vals) + "\n", encoding="utf-8"
        )
    click.echo(f"{split} miou = {report.miou:.4f}")


def _parse_int_list(text: str, what: str) -> tuple[int, ...]:
    try:
        values = tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise EdsError(f"{what} must be a comma-separated integer list, got {text!r}")
    if not values:
        raise EdsError(f"{what} must be non-empty")
    return values


@main.command()
@click.option("--mode", type=click.Choice(["supervised", "self-training", "ladder",
                                           "compare-samplers"]), required=True)
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True),
              help="Directory written by the synth subcommand (contains manifest.jsonl).")
@click.option("--sampler", type=click.Choice(["eds", "random"]), default="eds",
              show_default=True)
@click.option("--labeled-budget", type=int, default=300, show_default=True)
@click.option("--pseudo-budget", type=int, default=0, show_default=True)
@click.option("--rungs", default="200,400,800,1600,3200", show_default=True,
              help="Pseudo budgets for ladder mode.")
@click.option("--k", type=int, default=20, show_default=True)
@click.option("--grid", type=int, default=4, show_default=True)
@click.option("--bottom-fraction", type=float, default=DEFAULT_BOTTOM_FRACTION,
              show_default=True)
@click.option("--seeds", default="0", show_default=True,
              help="Comma-separated seed list; one experiment per seed.")
@click.option("--trials", type=int, default=20, show_default=True,
              help="Trials for compare-samplers mode.")
@click.option("--subset-size", type=int, default=500, show_default=True,
              help="Per-method subset size for compare-samplers mode.")
@click.option("--epochs", type=int, default=30, show_default=True,
              help="Training epochs for experiment models.")
@click.option("--patience", type=int, default=5, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Parallel trial processes.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--plot", is_flag=True, help="Emit density/KL value tables.")
@handle_errors
def experiment(mode, corpus_dir, sampler, labeled_budget, pseudo_budget, rungs, k, grid,
               bottom_fraction, seeds, trials, subset_size, epochs, patience, jobs,
               out_dir, plot):
    """Run a full experiment on a written corpus and save its reports."""
    corpus = load_corpus(Path(corpus_dir) / "manifest.jsonl")
    seed_list = _parse_int_list(seeds, "--seeds")
    hp = Hyperparams(epochs=epochs, patience=patience)
    cfg = ExperimentConfig(
        sampler=sampler, labeled_budget=labeled_budget, pseudo_budget=pseudo_budget,
        k=k, seeds=seed_list, teacher_hp=hp, student_hp=hp,
        roi=RoiSpec(bottom_fraction), grid=grid,
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if mode == "supervised":
        report = run_supervised(corpus, cfg, jobs=jobs)
        save_report(report, out / "report.json")
        (out / "report.csv").write_text(report_csv(report), encoding="utf-8")
        click.echo(f"teacher miou median = {report.teacher_miou_median:.4f}")
    elif mode == "self-training":
        report = run_self_training(corpus, cfg, jobs=jobs)
        save_report(report, out / "report.json")
        (out / "report.csv").write_text(report_csv(report), encoding="utf-8")
        click.echo(
            f"teacher miou median = {report.teacher_miou_median:.4f}, "
            f"student miou median = {report.student_miou_median:.4f}"
        )
    elif mode == "ladder":
        rung_list = _parse_int_list(rungs, "--rungs")
        reports = run_ladder(corpus, cfg, rung_list, jobs=jobs)
        doc = {str(r): rep.to_dict() for r, rep in reports.items()}
        (out / "ladder.json").write_text(
            json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n",
            encoding="utf-8",
        )
        for rung in rung_list:
            rep = reports[rung]
            click.echo(
                f"pseudo {rung}: teacher {rep.teacher_miou_median:.4f} "
                f"-> student {rep.student_miou_median:.4f}"
            )
    else:
        comparison = compare_samplers(corpus, cfg, trials, subset_size)
        save_report(comparison, out / "comparison.json")
        if plot:
            (out / "densities.csv").write_text(density_table(comparison), encoding="utf-8")
        click.echo(
            f"KL medians on {comparison.axis}: balanced {comparison.kl_eds_median:.4f} "
            f"vs random {comparison.kl_random_median:.4f} "
            f"(win fraction {comparison.eds_win_fraction:.2f})"
        )


if __name__ == "__main__":
    main()
