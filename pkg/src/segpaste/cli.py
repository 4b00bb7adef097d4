"""Command line entry point: ``segpaste <subcommand>``.

Diagnostics go to stderr; machine-readable results go to files or stdout.
Outputs never contain timestamps or host names, so reruns with identical
flags are byte-identical.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import click

from .bank import BankError, bank_stats, load_bank, save_bank
from .core import ClassMap, derive_rng
from .dataset import (
    ManifestEntry,
    ManifestError,
    class_histogram,
    load_manifest,
    load_sample,
    split_dataset,
    write_manifest,
)
from .extraction import InstanceExtractor
from .formats import FormatError, read_label_mask, write_label_mask, write_raster
from .metrics import evaluate_pairs, report_json
from .parallel import ordered_map
from .paste import AugmentConfig, augment_sample_detailed

logger = logging.getLogger("segpaste")

ON_OFF = click.Choice(["on", "off"])


def _fail_cleanly(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ValueError, OSError, KeyError) as exc:
            # ManifestError, BankError, SplitError and FormatError are ValueErrors
            msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
            raise click.ClickException(str(msg)) from exc

    return wrapper


def _seed(ctx: click.Context, seed: int | None) -> int:
    return ctx.obj["seed"] if seed is None else seed


def _threads(ctx: click.Context, threads: int | None) -> int:
    return ctx.obj["threads"] if threads is None else threads


seed_option = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None, help="Override the global seed.")
threads_option = click.option("--threads", type=click.IntRange(1), default=None, help="Override the global thread count.")


@click.group(context_settings={"show_default": True, "help_option_names": ["-h", "--help"]})
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, help="Global random seed.")
@click.option("--threads", type=click.IntRange(1), default=1, help="Worker threads for per-sample work; never changes outputs.")
@click.option("-v", "--verbose", count=True, help="Repeat for more log output.")
@click.pass_context
def cli(ctx, seed, threads, verbose):
    """Cut-and-Paste augmentation toolkit for multispectral segmentation."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    ctx.ensure_object(dict)
    ctx.obj.update(seed=seed, threads=threads)


@cli.command()
@click.argument("manifest", type=click.Path(dir_okay=False))
@click.argument("classmap", type=click.Path(dir_okay=False))
@click.argument("out_bank_dir", type=click.Path(file_okay=False))
@click.option("--connectivity", type=click.Choice(["4", "8"]), default="4", help="Pixel adjacency.")
@click.option("--min-pixels", type=click.IntRange(1), default=1, help="Drop smaller components.")
@click.option("--overwrite", is_flag=True, help="Replace an existing bank in OUT_BANK_DIR.")
@threads_option
@click.pass_context
@_fail_cleanly
def extract(ctx, manifest, classmap, out_bank_dir, connectivity, min_pixels, overwrite, threads):
    """Extract connected-component instances from every sample into a bank."""
    class_map = ClassMap.load(classmap)
    entries = load_manifest(manifest).entries
    n_jobs = _threads(ctx, threads)
    samples = ordered_map(lambda e: _load(e, class_map), entries, n_jobs)
    bank = InstanceExtractor(int(connectivity), min_pixels, n_jobs).fit(samples, class_map).bank_
    counts = save_bank(bank, out_bank_dir, overwrite=overwrite)
    summary = {"total": bank.total_count, "per_class": {class_map.names[c]: n for c, n in counts.items()}}
    click.echo(json.dumps(summary, indent=2))


def _load(entry: ManifestEntry, class_map: ClassMap | None = None):
    try:
        return load_sample(entry, class_map)
    except (OSError, FormatError) as exc:
        raise ManifestError(f"cannot read sample {entry.sample_id} ({entry.image_path}, {entry.mask_path}): {exc}") from exc


@cli.command()
@click.argument("manifest", type=click.Path(dir_okay=False))
@click.argument("bank_dir", type=click.Path(file_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--n-paste", type=click.IntRange(0), default=100, help="Instances pasted per sample.")
@click.option("--pre-paste-augment", type=ON_OFF, default="off", help="Flip/rotate instances before pasting.")
@click.option("--post-augment", type=ON_OFF, default="on", help="Flip/rotate samples after pasting.")
@click.option("--flip-probability", type=click.FloatRange(0, 1), default=0.5, help="Pre-paste per-axis flip probability.")
@click.option("--epoch", type=click.IntRange(0, 2**32 - 1), default=0, help="Epoch index mixed into each sample's stream.")
@seed_option
@threads_option
@click.pass_context
@_fail_cleanly
def augment(ctx, manifest, bank_dir, out_dir, n_paste, pre_paste_augment, post_augment, flip_probability, epoch, seed, threads):
    """Write augmented samples and their paste logs to OUT_DIR."""
    seed = _seed(ctx, seed)
    n_jobs = _threads(ctx, threads)
    cfg = AugmentConfig(
        n_paste=n_paste,
        pre_paste_augment=pre_paste_augment == "on",
        post_augment=post_augment == "on",
        flip_probability=flip_probability,
        global_seed=seed,
    )
    entries = load_manifest(manifest).entries
    bank = load_bank(bank_dir) if n_paste > 0 or Path(bank_dir).exists() else None
    if n_paste > 0 and bank.total_count == 0:
        raise BankError(f"bank {bank_dir} is empty but --n-paste is {n_paste}")
    class_map = bank.class_map if bank is not None else None

    def run(job):
        i, entry = job
        sample = _load(entry, class_map)
        return augment_sample_detailed(sample, bank, cfg, derive_rng(seed, epoch, i))

    results = ordered_map(run, list(enumerate(entries)), n_jobs)

    out = Path(out_dir)
    for sub in ("images", "masks", "events"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    written = []
    for entry, res in zip(entries, results):
        sid = entry.sample_id
        img, msk = out / "images" / f"{sid}.msra", out / "masks" / f"{sid}.mskl"
        write_raster(img, res.sample.image)
        write_label_mask(msk, res.sample.mask)
        log = {
            "sample_id": sid,
            "seed": seed,
            "epoch": epoch,
            "events": [ev.to_dict() for ev in res.events],
            "post_transform": asdict(res.post_transform),
        }
        (out / "events" / f"{sid}.json").write_text(json.dumps(log, indent=1) + "\n")
        written.append(ManifestEntry(sid, img, msk, entry.aoi_id, entry.date))
    write_manifest(out / "manifest.csv", written)
    logger.info("augmented %d samples into %s", len(written), out)


@cli.command("eval")
@click.argument("gt_manifest", type=click.Path(dir_okay=False))
@click.argument("pred_dir", type=click.Path(file_okay=False))
@click.argument("classmap", type=click.Path(dir_okay=False))
@click.option("--aggregation", type=click.Choice(["global", "per-image"]), default="global", help="Dataset-level matrix or mean of per-image mIoU.")
@click.option("--output", type=click.Path(dir_okay=False), default=None, help="Also write the report here.")
@_fail_cleanly
def eval_cmd(gt_manifest, pred_dir, classmap, aggregation, output):
    """Score predictions PRED_DIR/<sample_id>.mskl against the manifest masks."""
    class_map = ClassMap.load(classmap)
    entries = load_manifest(gt_manifest).entries
    pairs = []
    for e in entries:
        pred_path = Path(pred_dir) / f"{e.sample_id}.mskl"
        if not pred_path.is_file():
            raise ManifestError(f"missing prediction for sample {e.sample_id}: {pred_path}")
        gt = read_label_mask(e.mask_path).validate(class_map)
        pairs.append((gt, read_label_mask(pred_path)))
    report = report_json(evaluate_pairs(pairs, class_map.class_count, aggregation, class_map))
    if output:
        Path(output).write_text(report)
    click.echo(report, nl=False)


@cli.command()
@click.argument("manifest", type=click.Path(dir_okay=False))
@click.argument("classmap", type=click.Path(dir_okay=False))
@click.option("--val-fraction", type=click.FloatRange(0, 1, min_open=True, max_open=True), default=0.1, help="Target validation share of samples.")
@click.option("--max-attempts", type=click.IntRange(1), default=10_000, help="Rejection-sampling budget.")
@click.option("--output", type=click.Path(dir_okay=False), default=None, help="Write the split JSON here instead of stdout.")
@seed_option
@click.pass_context
@_fail_cleanly
def split(ctx, manifest, classmap, val_fraction, max_attempts, output, seed):
    """AOI-disjoint train/validation split covering every class on both sides."""
    class_map = ClassMap.load(classmap)
    result = split_dataset(load_manifest(manifest), class_map, val_fraction, _seed(ctx, seed), max_attempts)
    text = result.to_json()
    if output:
        Path(output).write_text(text)
    else:
        click.echo(text, nl=False)


@cli.command()
@click.argument("manifest", type=click.Path(dir_okay=False))
@click.argument("classmap", type=click.Path(dir_okay=False))
@click.option("--bank", "bank_dir", type=click.Path(file_okay=False), default=None, help="Also report instance statistics for this bank.")
@threads_option
@click.pass_context
@_fail_cleanly
def stats(ctx, manifest, classmap, bank_dir, threads):
    """Per-class pixel histogram of the manifest masks (and optionally a bank)."""
    class_map = ClassMap.load(classmap)
    hist = class_histogram(load_manifest(manifest), class_map, _threads(ctx, threads))
    body = {
        "histogram": {str(c): int(n) for c, n in enumerate(hist)},
        "names": {str(c): n for c, n in class_map.classes},
        "total_pixels": int(hist.sum()),
    }
    if bank_dir:
        body["bank"] = [asdict(s) for s in bank_stats(load_bank(bank_dir))]
    click.echo(json.dumps(body, indent=2))


def _synthetic_options(fn):
    opts = [
        click.option("--image-size", type=click.IntRange(4), default=64, help="Square image side in pixels."),
        click.option("--bands", type=click.IntRange(1), default=4, help="Spectral bands."),
        click.option("--classes", "class_count", type=click.IntRange(1, 254), default=6, help="Class count including background."),
        click.option("--rare-fraction", type=float, default=0.01, help="Target pixel share of the rare class."),
        click.option("--noise-sigma", type=click.FloatRange(0), default=0.12, help="Per-band Gaussian noise."),
        click.option("--train-images", type=click.IntRange(1), default=40, help="Training images."),
        click.option("--test-images", type=click.IntRange(1), default=10, help="Test images."),
        click.option("--data-seed", type=click.IntRange(0, 2**64 - 1), default=0, help="Seed of the generated dataset."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _synthetic_config(kw: dict):
    from .demo import SyntheticConfig

    return SyntheticConfig(
        image_size=kw.pop("image_size"),
        bands=kw.pop("bands"),
        class_count=kw.pop("class_count"),
        rare_class_pixel_fraction=kw.pop("rare_fraction"),
        band_noise_sigma=kw.pop("noise_sigma"),
        images_per_split=(kw.pop("train_images"), kw.pop("test_images")),
        seed=kw.pop("data_seed"),
    )


@cli.command()
@click.argument("out_dir", type=click.Path(file_okay=False))
@_synthetic_options
@_fail_cleanly
def synth(out_dir, **kw):
    """Generate the synthetic imbalanced dataset (train/, test/, classmap.json)."""
    from .demo import gen_synthetic

    train, test = gen_synthetic(_synthetic_config(kw), out_dir)
    click.echo(json.dumps({"train": str(train), "test": str(test)}, indent=2))


@cli.command()
@click.option("--out-dir", type=click.Path(file_okay=False), default="demo_out", help="Report and data directory.")
@click.option("--n-paste", "n_paste", type=click.IntRange(1), multiple=True, default=(50,), help="Cut-and-Paste N; repeat for a grid.")
@click.option("--pre-paste-augment", "pre", type=ON_OFF, multiple=True, default=("off",), help="Pre-paste transforms; repeat for both.")
@click.option("--seeds", type=click.IntRange(1), default=3, help="Training seeds per variant (0..seeds-1).")
@click.option("--epochs", type=click.IntRange(0), default=15, help="SGD epochs.")
@click.option("--learning-rate", type=click.FloatRange(0, min_open=True), default=2.0, help="SGD step size.")
@click.option("--batch-pixels", type=click.IntRange(1), default=1024, help="Pixels per mini-batch.")
@_synthetic_options
@_fail_cleanly
def demo(out_dir, n_paste, pre, seeds, epochs, learning_rate, batch_pixels, **kw):
    """Baseline vs Cut-and-Paste on synthetic data; writes report.json and report.txt."""
    from .demo import ExperimentConfig, format_report, run_experiment, variant_grid, write_report

    pre_opts = tuple(dict.fromkeys(p == "on" for p in pre))
    cfg = ExperimentConfig(
        synthetic=_synthetic_config(kw),
        variants=variant_grid(tuple(dict.fromkeys(n_paste)), pre_opts),
        seeds=tuple(range(seeds)),
        epochs=epochs,
        learning_rate=learning_rate,
        batch_pixels=batch_pixels,
    )
    report = run_experiment(cfg, out_dir)
    write_report(report, out_dir)
    click.echo(format_report(report), nl=False)


def main(argv=None):
    cli.main(args=argv, prog_name="segpaste", obj={})


if __name__ == "__main__":
    main()
