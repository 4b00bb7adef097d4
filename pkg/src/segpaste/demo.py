"""Synthetic imbalanced dataset and a baseline-vs-Cut-and-Paste experiment."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .bank import InstanceBank
from .classifier import SoftmaxPixelClassifier
from .core import ClassMap, Raster, Rng, Sample, SemanticMask, derive_rng
from .dataset import DatasetManifest, ManifestEntry, load_manifest, load_samples, write_manifest
from .extraction import InstanceExtractor
from .formats import write_label_mask, write_raster
from .metrics import evaluate_pairs
from .paste import AugmentConfig, augment_sample

logger = logging.getLogger(__name__)

_SPLIT_STREAMS = {"train": 1, "test": 2}


@dataclass(frozen=True)
class SyntheticConfig:
    """Synthetic dataset description.

    Class 0 is the background canvas and the last class is the rare one.
    When ``band_mean_per_class`` is None every class starts at
    ``base_level`` in all bands; common class ``c`` is raised by
    ``common_offset`` in band ``(c - 1) % bands`` (plus half that in the
    next band once bands run out), and the rare class is raised by
    ``rare_offset`` in bands 0 and 1.
    """

    image_size: int = 64
    bands: int = 4
    class_count: int = 6
    rare_class_pixel_fraction: float = 0.01
    band_mean_per_class: tuple[tuple[float, ...], ...] | None = None
    band_noise_sigma: float = 0.12
    images_per_split: tuple[int, int] = (40, 10)
    seed: int = 0
    images_per_aoi: int = 4
    base_level: float = 0.3
    common_offset: float = 0.4
    rare_offset: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.rare_class_pixel_fraction < 0.5:
            raise ValueError("rare_class_pixel_fraction must be in (0, 0.5)")
        if self.image_size < 4 or self.bands < 1 or not 1 <= self.class_count <= 254:
            raise ValueError("invalid image_size, bands or class_count")
        if self.band_noise_sigma < 0:
            raise ValueError("band_noise_sigma must be >= 0")
        means = self.means()
        if means.shape != (self.class_count, self.bands) or not np.all(np.isfinite(means)):
            raise ValueError("band_mean_per_class must be a finite class_count x bands table")

    def means(self) -> np.ndarray:
        if self.band_mean_per_class is not None:
            return np.asarray(self.band_mean_per_class, dtype=np.float64)
        C, B = self.class_count, self.bands
        m = np.full((C, B), self.base_level)
        for c in range(1, C - 1):
            m[c, (c - 1) % B] += self.common_offset
            m[c, c % B] += self.common_offset / 2 * ((c - 1) // B)
        if C > 1:
            m[C - 1, 0] += self.rare_offset
            m[C - 1, 1 % B] += self.rare_offset
        return m

    @property
    def class_map(self) -> ClassMap:
        names = ["background"] + [f"class{i}" for i in range(1, self.class_count - 1)]
        if self.class_count > 1:
            names.append("rare")
        return ClassMap(tuple(names))

    @property
    def rare_class(self) -> int | None:
        return self.class_count - 1 if self.class_count > 1 else None


def _shape_mask(size: int, top: int, left: int, h: int, w: int, ellipse: bool) -> np.ndarray:
    rows, cols = np.ogrid[:size, :size]
    if not ellipse:
        return (rows >= top) & (rows < top + h) & (cols >= left) & (cols < left + w)
    cy, cx = top + (h - 1) / 2, left + (w - 1) / 2
    return ((rows - cy) / (h / 2)) ** 2 + ((cols - cx) / (w / 2)) ** 2 <= 1.0


def synth_labels(cfg: SyntheticConfig, rng: Rng) -> np.ndarray:
    """One label image: background canvas, common-class blobs, then maybe one rare blob."""
    size = cfg.image_size
    labels = np.zeros((size, size), dtype=np.uint8)
    lo, hi = max(2, size // 10), max(3, size // 3)
    for c in range(1, cfg.class_count - 1):
        for _ in range(1 + rng.integers(3)):
            h, w = lo + rng.integers(hi - lo + 1), lo + rng.integers(hi - lo + 1)
            top, left = rng.integers(size - h + 1), rng.integers(size - w + 1)
            labels[_shape_mask(size, top, left, h, w, rng.bernoulli(0.5))] = c
    rare = cfg.rare_class
    if rare is not None and rng.bernoulli(0.5):
        # half the images carry one rare square of twice the mean share
        side = max(1, round(math.sqrt(2 * cfg.rare_class_pixel_fraction) * size))
        top, left = rng.integers(size - side + 1), rng.integers(size - side + 1)
        labels[top : top + side, left : left + side] = rare
    return labels


def synth_image(cfg: SyntheticConfig, labels: np.ndarray, rng: Rng) -> np.ndarray:
    means = cfg.means()
    noise = rng.normal_array(cfg.bands * labels.size).reshape(cfg.bands, *labels.shape)
    img = means[labels].transpose(2, 0, 1) + cfg.band_noise_sigma * noise
    return img.astype(np.float32).astype(np.float64)


def generate_split(cfg: SyntheticConfig, split: str) -> list[Sample]:
    n = cfg.images_per_split[0 if split == "train" else 1]
    out = []
    for i in range(n):
        rng = Rng(derive_rng(cfg.seed, _SPLIT_STREAMS[split], i))
        labels = synth_labels(cfg, rng)
        image = synth_image(cfg, labels, rng)
        out.append(Sample(Raster(image, "f32"), SemanticMask(labels), f"{split}_{i:04d}", f"{split}_aoi{i // cfg.images_per_aoi:03d}"))
    return out


def _check_fraction(cfg: SyntheticConfig) -> None:
    if cfg.rare_class is None:
        return
    side = math.sqrt(2 * cfg.rare_class_pixel_fraction) * cfg.image_size
    if side < 1 or side > cfg.image_size:
        raise ValueError(
            f"rare_class_pixel_fraction {cfg.rare_class_pixel_fraction} is not achievable "
            f"on {cfg.image_size}x{cfg.image_size} images"
        )


def write_split(samples: Sequence[Sample], directory: Path) -> Path:
    (directory / "images").mkdir(parents=True, exist_ok=True)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        img = directory / "images" / f"{s.sample_id}.msra"
        msk = directory / "masks" / f"{s.sample_id}.mskl"
        write_raster(img, s.image)
        write_label_mask(msk, s.mask)
        entries.append(ManifestEntry(s.sample_id, img, msk, s.aoi_id, f"2018-{i % 12 + 1:02d}-01"))
    path = directory / "manifest.csv"
    write_manifest(path, entries)
    return path


def gen_synthetic(cfg: SyntheticConfig, out_dir) -> tuple[Path, Path]:
    """Write ``train/`` and ``test/`` splits plus ``classmap.json``; return both manifest paths."""
    _check_fraction(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.class_map.save(out_dir / "classmap.json")
    return (
        write_split(generate_split(cfg, "train"), out_dir / "train"),
        write_split(generate_split(cfg, "test"), out_dir / "test"),
    )


def tree_digest(directory) -> str:
    """SHA-256 over relative paths and contents of every file under ``directory``."""
    h = hashlib.sha256()
    root = Path(directory)
    for p in sorted(q for q in root.rglob("*") if q.is_file()):
        h.update(p.relative_to(root).as_posix().encode() + b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()


def _as_samples(data) -> list[Sample]:
    if isinstance(data, (str, Path)):
        data = load_manifest(data)
    if isinstance(data, DatasetManifest):
        return load_samples(data)
    return list(data)


def train_pixel_classifier(
    train,
    bank: InstanceBank | None,
    augment: AugmentConfig | None,
    epochs: int = 10,
    learning_rate: float = 0.5,
    batch_pixels: int = 1024,
    seed: int = 0,
    n_classes: int | None = None,
) -> SoftmaxPixelClassifier:
    """Fit the pixel classifier, augmenting each sample afresh every epoch.

    ``train`` is a manifest, a manifest path or a list of samples. With an
    ``augment`` config, sample ``i`` of epoch ``e`` goes through
    ``augment_sample`` with ``derive_rng(seed, e, i)`` before its pixels are
    used.
    """
    samples = _as_samples(train)
    if not samples:
        raise ValueError("empty training set")
    if augment is not None and augment.n_paste > 0 and (bank is None or bank.total_count == 0):
        raise ValueError("n_paste > 0 requires a non-empty bank")
    if n_classes is None:
        top = max(max(s.mask.classes_present(), default=0) for s in samples)
        if bank is not None:
            top = max(top, bank.class_map.class_count - 1)
        n_classes = top + 1

    def epoch_samples():
        for e in range(epochs):
            if augment is None:
                yield samples
            else:
                yield [augment_sample(s, bank, augment, derive_rng(seed, e, i))[0] for i, s in enumerate(samples)]

    clf = SoftmaxPixelClassifier(n_classes, epochs, learning_rate, batch_pixels, seed)
    return clf.fit_samples(epoch_samples(), samples[0].image.bands, n_classes)


def evaluate_classifier(model: SoftmaxPixelClassifier, data, class_map: ClassMap | None = None, aggregation: str = "global") -> dict:
    """Predict every pixel by argmax score and score the predictions with mIoU."""
    samples = _as_samples(data)
    C = len(model.classes_)
    for s in samples:
        if s.image.bands != model.n_features_in_:
            raise ValueError(f"sample {s.sample_id} has {s.image.bands} bands, model expects {model.n_features_in_}")
    pairs = ((s.mask, model.predict_mask(s)) for s in samples)
    return evaluate_pairs(pairs, C, aggregation, class_map)


@dataclass(frozen=True)
class Variant:
    name: str
    n_paste: int
    pre_paste_augment: bool = False


DEFAULT_VARIANTS = (Variant("baseline", 0), Variant("C&P N=50", 50))


@dataclass(frozen=True)
class ExperimentConfig:
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    variants: tuple[Variant, ...] = DEFAULT_VARIANTS
    seeds: tuple[int, ...] = (0, 1, 2)
    epochs: int = 15
    learning_rate: float = 2.0
    batch_pixels: int = 1024
    connectivity: int = 4
    min_pixels: int = 1
    post_augment: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def variant_grid(n_values: Sequence[int] = (10, 100, 1000), pre_options: Sequence[bool] = (True, False)) -> tuple[Variant, ...]:
    """Baseline plus every (N, pre-paste on/off) combination."""
    out = [Variant("baseline", 0)]
    for pre in pre_options:
        for n in n_values:
            out.append(Variant(f"C&P N={n}{' +pre' if pre else ''}", n, pre))
    return tuple(out)


def _mean_std(values: list[float]) -> tuple[float, float]:
    a = np.array([v for v in values if v is not None and not math.isnan(v)], dtype=float)
    if not len(a):
        return math.nan, math.nan
    return float(a.mean()), float(a.std(ddof=1)) if len(a) > 1 else 0.0


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Generate data once, then train and score every variant under every seed.

    Returns a report with one row per (variant, seed), a mean/std summary per
    variant, and the dataset digest shared by all rows.
    """
    t0 = time.perf_counter()
    tmp = None
    if out_dir is None:
        tmp = tempfile.TemporaryDirectory()
        out_dir = tmp.name
    data_dir = Path(out_dir) / "data"
    try:
        train_manifest, test_manifest = gen_synthetic(cfg.synthetic, data_dir)
        digest = tree_digest(data_dir)
        class_map = cfg.synthetic.class_map
        train = load_samples(load_manifest(train_manifest), class_map)
        test = load_samples(load_manifest(test_manifest), class_map)
    finally:
        if tmp is not None:
            tmp.cleanup()
    bank = InstanceExtractor(cfg.connectivity, cfg.min_pixels).fit(train, class_map).bank_
    rare = class_map.names[cfg.synthetic.rare_class] if cfg.synthetic.rare_class is not None else None

    rows = []
    for v in cfg.variants:
        aug = AugmentConfig(n_paste=v.n_paste, pre_paste_augment=v.pre_paste_augment, post_augment=cfg.post_augment)
        for seed in cfg.seeds:
            model = train_pixel_classifier(
                train, bank, aug, cfg.epochs, cfg.learning_rate, cfg.batch_pixels, seed, class_map.class_count
            )
            rep = evaluate_classifier(model, test, class_map)
            rows.append(
                {
                    "variant": v.name,
                    "n_paste": v.n_paste,
                    "pre_paste_augment": v.pre_paste_augment,
                    "seed": seed,
                    "miou": rep["miou"],
                    "rare_iou": rep["iou"][rare] if rare else None,
                    "iou": rep["iou"],
                    "dataset_sha256": digest,
                }
            )
            logger.info("%s seed=%d mIoU=%.4f rare=%s", v.name, seed, rep["miou"], rows[-1]["rare_iou"])

    summary = []
    for v in cfg.variants:
        mine = [r for r in rows if r["variant"] == v.name]
        m, s = _mean_std([r["miou"] for r in mine])
        rm, rs = _mean_std([r["rare_iou"] for r in mine])
        per_class = {n: _mean_std([r["iou"][n] for r in mine]) for n in class_map.names}
        summary.append(
            {
                "variant": v.name,
                "n_paste": v.n_paste,
                "pre_paste_augment": v.pre_paste_augment,
                "miou_mean": m,
                "miou_std": s,
                "rare_iou_mean": rm,
                "rare_iou_std": rs,
                "iou_mean": {n: ms[0] for n, ms in per_class.items()},
                "iou_std": {n: ms[1] for n, ms in per_class.items()},
            }
        )
    return {
        "config": cfg.to_dict(),
        "class_names": list(class_map.names),
        "rare_class": rare,
        "dataset_sha256": digest,
        "bank_counts": [len(r) for r in bank.per_class],
        "rows": rows,
        "summary": summary,
        "runtime_seconds": round(time.perf_counter() - t0, 1),
    }


def _fmt(x) -> str:
    return "   -  " if x is None or (isinstance(x, float) and math.isnan(x)) else f"{100 * x:6.1f}"


def format_report(report: dict) -> str:
    """Aligned text table: per-seed rows, then mean (std) per variant; values in percent."""
    names = report["class_names"]
    head = f"{'variant':<18} {'pre':>3} {'seed':>4} " + " ".join(f"{n[:6]:>6}" for n in names) + f" {'mIoU':>6}"
    lines = [head, "-" * len(head)]
    for r in report["rows"]:
        pre = "yes" if r["pre_paste_augment"] else "no"
        cells = " ".join(_fmt(r["iou"][n]) for n in names)
        lines.append(f"{r['variant']:<18} {pre:>3} {r['seed']:>4} {cells} {_fmt(r['miou'])}")
    lines.append("")
    lines.append(f"{'variant':<18} {'pre':>3} {'mIoU mean (std)':>16} {'rare IoU mean (std)':>20}")
    for s in report["summary"]:
        pre = "yes" if s["pre_paste_augment"] else "no"
        miou = f"{_fmt(s['miou_mean']).strip()} ({_fmt(s['miou_std']).strip()})"
        rare = f"{_fmt(s['rare_iou_mean']).strip()} ({_fmt(s['rare_iou_std']).strip()})"
        lines.append(f"{s['variant']:<18} {pre:>3} {miou:>16} {rare:>20}")
    return "\n".join(lines) + "\n"


def write_report(report: dict, directory) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    j = directory / "report.json"
    t = directory / "report.txt"
    body = _nan_to_none({k: v for k, v in report.items() if k != "runtime_seconds"})
    j.write_text(json.dumps(body, indent=2) + "\n")
    t.write_text(format_report(report))
    return j, t


def _nan_to_none(o):
    if isinstance(o, float) and math.isnan(o):
        return None
    if isinstance(o, dict):
        return {k: _nan_to_none(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_nan_to_none(v) for v in o]
    return o
