"""Dataset manifests, class histograms and leakage-safe AOI splits.

Manifest files are CSV with the header
``sample_id,image_path,mask_path,aoi_id,date``. Relative paths resolve
against the manifest's own directory.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import IGNORE, ClassMap, Rng, RngState, Sample
from .formats import read_label_mask, read_raster
from .parallel import ordered_map

logger = logging.getLogger(__name__)

MANIFEST_FIELDS = ["sample_id", "image_path", "mask_path", "aoi_id", "date"]


class ManifestError(ValueError):
    pass


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestEntry:
    sample_id: str
    image_path: Path
    mask_path: Path
    aoi_id: str
    date: str = ""


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def sample_ids(self) -> list[str]:
        return [e.sample_id for e in self.entries]


def _check_date(text: str) -> None:
    try:
        dt.date.fromisoformat(text)
    except ValueError:
        dt.datetime.fromisoformat(text)


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    """Parse and validate a manifest CSV; errors name the offending line."""
    path = Path(path)
    base = path.parent
    entries = []
    seen: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != MANIFEST_FIELDS:
            raise ManifestError(f"{path}: header must be {','.join(MANIFEST_FIELDS)}, got {header}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MANIFEST_FIELDS):
                raise ManifestError(f"{path} line {line}: expected {len(MANIFEST_FIELDS)} fields, got {len(row)}")
            sid, image, mask, aoi, date = (c.strip() for c in row)
            if not sid or not image or not mask or not aoi:
                raise ManifestError(f"{path} line {line}: empty required field")
            if sid in seen:
                raise ManifestError(f"{path} line {line}: duplicate sample_id {sid!r} (first at line {seen[sid]})")
            seen[sid] = line
            if date:
                try:
                    _check_date(date)
                except ValueError:
                    raise ManifestError(f"{path} line {line}: bad ISO-8601 date {date!r}") from None
            image_path, mask_path = base / image, base / mask
            if check_files:
                for p in (image_path, mask_path):
                    if not p.is_file():
                        raise ManifestError(f"{path} line {line}: missing file {p}")
            entries.append(ManifestEntry(sid, image_path, mask_path, aoi, date))
    return DatasetManifest(tuple(entries))


def write_manifest(path, entries: Sequence[ManifestEntry]) -> None:
    """Write entries, storing paths relative to the manifest when possible."""
    path = Path(path)
    base = path.parent.resolve()

    def rel(p: Path) -> str:
        p = Path(p)
        try:
            return p.resolve().relative_to(base).as_posix()
        except ValueError:
            return str(p)

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for e in entries:
            w.writerow([e.sample_id, rel(e.image_path), rel(e.mask_path), e.aoi_id, e.date])


def load_sample(entry: ManifestEntry, class_map: ClassMap | None = None) -> Sample:
    mask = read_label_mask(entry.mask_path)
    if class_map is not None:
        mask.validate(class_map)
    return Sample(read_raster(entry.image_path), mask, entry.sample_id, entry.aoi_id)


def load_samples(manifest: DatasetManifest, class_map: ClassMap | None = None, n_jobs: int = 1) -> list[Sample]:
    return ordered_map(lambda e: load_sample(e, class_map), manifest.entries, n_jobs)


def mask_histogram(values: np.ndarray, class_count: int) -> np.ndarray:
    v = values[values != IGNORE]
    if v.size and v.max() >= class_count:
        raise ValueError(f"class id {int(v.max())} outside the class map (C={class_count})")
    return np.bincount(v.ravel(), minlength=class_count).astype(np.int64)


def sample_histograms(manifest: DatasetManifest, class_map: ClassMap, n_jobs: int = 1) -> np.ndarray:
    """Per-sample class pixel counts, shape ``(n_samples, C)``."""

    def one(e: ManifestEntry) -> np.ndarray:
        try:
            mask = read_label_mask(e.mask_path)
        except (OSError, ValueError) as exc:
            raise ManifestError(f"cannot read mask {e.mask_path}: {exc}") from exc
        return mask_histogram(mask.values, class_map.class_count)

    rows = ordered_map(one, manifest.entries, n_jobs)
    return np.array(rows, dtype=np.int64).reshape(len(rows), class_map.class_count)


def class_histogram(manifest: DatasetManifest, class_map: ClassMap, n_jobs: int = 1) -> np.ndarray:
    """Pixel count per class over all non-IGNORE pixels of every mask."""
    return sample_histograms(manifest, class_map, n_jobs).sum(axis=0)


@dataclass(frozen=True)
class SplitResult:
    train_ids: list[str]
    val_ids: list[str]
    seed: int
    class_presence: dict[str, dict[str, int]]

    def to_json(self) -> str:
        body = {
            "train_ids": self.train_ids,
            "val_ids": self.val_ids,
            "seed": self.seed,
            "class_presence": self.class_presence,
        }
        return json.dumps(body, indent=2) + "\n"


def _has(bits: int, s: int) -> bool:
    return s >= 0 and (bits >> s) & 1 == 1


def _random_subset_with_sum(sizes: Sequence[int], order: Sequence[int], target: int, rng: Rng) -> list[int]:
    """Random subset of ``order`` whose sizes sum to ``target`` (assumed reachable)."""
    reach = [0] * (len(order) + 1)
    reach[-1] = 1
    for i in range(len(order) - 1, -1, -1):
        reach[i] = reach[i + 1] | (reach[i + 1] << sizes[order[i]])
    chosen, remaining = [], target
    for i, a in enumerate(order):
        take = _has(reach[i + 1], remaining - sizes[a])
        skip = _has(reach[i + 1], remaining)
        if take and (not skip or rng.bernoulli(0.5)):
            chosen.append(a)
            remaining -= sizes[a]
    return chosen


def split_groups(
    groups: Sequence[str],
    histograms: np.ndarray,
    val_fraction: float,
    seed: int,
    max_attempts: int = 10_000,
    class_names: Sequence[str] | None = None,
) -> tuple[list[int], list[int]]:
    """Assign whole groups to train/validation by rejection sampling.

    ``groups[i]`` is the group of sample ``i`` and ``histograms[i]`` its
    per-class pixel counts. Each attempt draws a random set of groups whose
    sample count is the achievable count closest to ``val_fraction`` of the
    samples, and is accepted when every class present in the data has pixels
    on both sides. Returns ``(train_indices, val_indices)``.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    n = len(groups)
    if n == 0:
        raise SplitError("cannot split an empty manifest")
    histograms = np.asarray(histograms, dtype=np.int64)
    names = list(class_names) if class_names is not None else [str(i) for i in range(histograms.shape[1])]

    keys = list(dict.fromkeys(groups))
    members = {k: [] for k in keys}
    for i, g in enumerate(groups):
        members[g].append(i)
    sizes = [len(members[k]) for k in keys]
    ghist = np.array([histograms[members[k]].sum(axis=0) for k in keys])
    present = ghist.sum(axis=0) > 0

    reachable = 1
    for s in sizes:
        reachable |= reachable << s
    candidates = [s for s in range(1, n) if _has(reachable, s)]
    if not candidates:
        raise SplitError(f"cannot split {len(keys)} group(s) into two non-empty sides")
    target = val_fraction * n
    best = min(abs(s - target) for s in candidates)
    val_sizes = [s for s in candidates if abs(s - target) == best]

    rng = Rng(RngState(seed & (2**64 - 1), 0x5350_4C49_5400))  # "SPLIT"
    failures: Counter = Counter()
    for _ in range(max_attempts):
        size = val_sizes[rng.integers(len(val_sizes))]
        order = rng.permutation(len(keys))
        val = set(_random_subset_with_sum(sizes, order, size, rng))
        in_val = np.array([k in val for k in range(len(keys))])
        val_px = ghist[in_val].sum(axis=0)
        train_px = ghist[~in_val].sum(axis=0)
        missing = present & ((val_px == 0) | (train_px == 0))
        if not missing.any():
            val_idx = sorted(i for k in val for i in members[keys[k]])
            train_idx = sorted(set(range(n)) - set(val_idx))
            return train_idx, val_idx
        for c in np.flatnonzero(missing):
            side = "validation" if val_px[c] == 0 else "train"
            failures[(names[c], side)] += 1
    worst = ", ".join(f"class {c!r} absent from {side} in {k} attempts" for (c, side), k in failures.most_common(3))
    raise SplitError(f"no split covering every class in both sides after {max_attempts} attempts: {worst}")


def split_dataset(
    manifest: DatasetManifest,
    class_map: ClassMap,
    val_fraction: float = 0.1,
    seed: int = 0,
    max_attempts: int = 10_000,
    histograms: np.ndarray | None = None,
) -> SplitResult:
    """AOI-disjoint, class-covering train/validation split of ``manifest``."""
    if len(manifest) == 0:
        raise SplitError("cannot split an empty manifest")
    if histograms is None:
        histograms = sample_histograms(manifest, class_map)
    train, val = split_groups(
        [e.aoi_id for e in manifest], histograms, val_fraction, seed, max_attempts, class_map.names
    )
    ids = manifest.sample_ids
    presence = {
        side: {name: int(v) for name, v in zip(class_map.names, histograms[idx].sum(axis=0))}
        for side, idx in (("train", train), ("val", val))
    }
    return SplitResult([ids[i] for i in train], [ids[i] for i in val], seed, presence)
