"""Instance bank: per-class instance collections and their on-disk layout.

Layout of a bank directory::

    classmap.json          class ids and names
    manifest.jsonl         one JSON object per instance, grouped by class
    data/<id>.patch        image patch, raster format
    data/<id>.mask         instance mask, binary mask format

``save_bank`` requires exclusive access to the directory; nothing enforces
it.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import ClassMap
from .extraction import InstanceRecord
from .formats import (
    FormatError,
    decode_binary_mask,
    decode_raster,
    encode_binary_mask,
    encode_raster,
)

logger = logging.getLogger(__name__)

MANIFEST = "manifest.jsonl"
CLASSMAP = "classmap.json"
DATA_DIR = "data"
PARTIAL_MARKER = ".partial"

_ID_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


class BankError(ValueError):
    """A bank directory is inconsistent or a bank violates its invariants."""


def instance_id(n: int) -> str:
    return f"i{n:08d}"


class InstanceBank:
    """Instances grouped by class, immutable once built.

    ``per_class[c]`` is the ordered tuple of records of class ``c``; order
    within a class is the manifest order and survives save/load.
    """

    def __init__(self, class_map: ClassMap, per_class: Sequence[Sequence[InstanceRecord]]):
        if len(per_class) != class_map.class_count:
            raise BankError(
                f"per_class has {len(per_class)} lists but the class map has "
                f"{class_map.class_count} classes"
            )
        for c, recs in enumerate(per_class):
            for r in recs:
                if r.class_id != c:
                    raise BankError(f"instance {r.instance_id!r} of class {r.class_id} filed under class {c}")
        self.class_map = class_map
        self.per_class = tuple(tuple(recs) for recs in per_class)

    @classmethod
    def from_records(cls, class_map: ClassMap, records: Iterable[InstanceRecord]) -> "InstanceBank":
        """Group records by class, giving unnamed ones sequential ids.

        An unnamed record at position ``k`` (0-based) becomes ``i{k+1:08d}``.
        """
        per_class: list[list[InstanceRecord]] = [[] for _ in range(class_map.class_count)]
        for k, r in enumerate(records):
            if r.class_id >= class_map.class_count:
                raise BankError(
                    f"instance of class {r.class_id} outside the class map (C={class_map.class_count})"
                )
            per_class[r.class_id].append(r if r.instance_id else r.with_id(instance_id(k + 1)))
        return cls(class_map, per_class)

    @property
    def total_count(self) -> int:
        return sum(len(recs) for recs in self.per_class)

    @property
    def nonempty_classes(self) -> list[int]:
        return [c for c, recs in enumerate(self.per_class) if recs]

    def records(self) -> list[InstanceRecord]:
        return [r for recs in self.per_class for r in recs]

    def __iter__(self):
        return iter(self.records())

    def __len__(self):
        return self.total_count

    def __eq__(self, other):
        if not isinstance(other, InstanceBank):
            return NotImplemented
        return self.class_map == other.class_map and self.per_class == other.per_class

    def __repr__(self):
        counts = ", ".join(str(len(r)) for r in self.per_class)
        return f"InstanceBank(classes={self.class_map.class_count}, counts=[{counts}])"


def _manifest_line(r: InstanceRecord) -> str:
    entry = {
        "id": r.instance_id,
        "class_id": r.class_id,
        "height": r.height,
        "width": r.width,
        "bands": r.bands,
        "pixel_count": r.pixel_count,
        "source_sample_id": r.source_sample_id,
        "bbox": list(r.source_bbox),
    }
    return json.dumps(entry, separators=(",", ":"))


def save_bank(bank: InstanceBank, directory, overwrite: bool = False) -> dict[int, int]:
    """Write ``bank`` under ``directory`` and return instance counts per class.

    Raises BankError on duplicate or unsafe ids, or when the directory
    already holds a bank and ``overwrite`` is false. On an I/O failure every
    file written so far is removed, along with the in-progress marker.
    """
    directory = Path(directory)
    records = bank.records()
    seen: set[str] = set()
    for r in records:
        if not r.instance_id or not _ID_RE.match(r.instance_id):
            raise BankError(f"invalid instance id {r.instance_id!r}")
        if r.instance_id in seen:
            raise BankError(f"duplicate instance id {r.instance_id!r}")
        seen.add(r.instance_id)

    directory.mkdir(parents=True, exist_ok=True)
    if (directory / MANIFEST).exists():
        if not overwrite:
            raise BankError(f"{directory} already contains a bank")
        for old in (directory / DATA_DIR).glob("*"):
            if old.suffix in (".patch", ".mask"):
                old.unlink()
    data = directory / DATA_DIR
    data.mkdir(exist_ok=True)
    marker = directory / PARTIAL_MARKER
    marker.write_text("")
    written: list[Path] = []
    try:
        for r in records:
            for suffix, blob in (
                (".patch", encode_raster(r.patch)),
                (".mask", encode_binary_mask(r.mask)),
            ):
                path = data / f"{r.instance_id}{suffix}"
                path.write_bytes(blob)
                written.append(path)
        path = directory / CLASSMAP
        path.write_text(bank.class_map.to_json())
        written.append(path)
        path = directory / MANIFEST
        path.write_text("".join(_manifest_line(r) + "\n" for r in records))
        written.append(path)
    except BaseException:
        for path in written:
            path.unlink(missing_ok=True)
        marker.unlink(missing_ok=True)
        raise
    marker.unlink()
    summary = {c: len(recs) for c, recs in enumerate(bank.per_class)}
    logger.info("saved %d instances to %s", bank.total_count, directory)
    return summary


def _read_record(data: Path, entry: dict, class_map: ClassMap) -> InstanceRecord:
    iid = entry["id"]
    if entry["class_id"] >= class_map.class_count or entry["class_id"] < 0:
        raise BankError(f"instance {iid}: class_id {entry['class_id']} outside the class map")
    blobs = {}
    for suffix in (".patch", ".mask"):
        path = data / f"{iid}{suffix}"
        if not path.is_file():
            raise BankError(f"instance {iid}: missing blob {path.name}")
        blobs[suffix] = path.read_bytes()
    try:
        patch = decode_raster(blobs[".patch"])
        mask = decode_binary_mask(blobs[".mask"])
    except FormatError as exc:
        raise BankError(f"instance {iid}: {exc}") from exc
    shape = (entry["bands"], entry["height"], entry["width"])
    if patch.samples.shape != shape:
        raise BankError(f"instance {iid}: patch shape {patch.samples.shape} != manifest {shape}")
    if mask.shape != shape[1:]:
        raise BankError(f"instance {iid}: mask shape {mask.shape} != manifest {shape[1:]}")
    try:
        rec = InstanceRecord(
            class_id=entry["class_id"],
            patch=patch,
            mask=mask,
            source_sample_id=entry["source_sample_id"],
            source_bbox=entry["bbox"],
            instance_id=iid,
            pixel_count=entry["pixel_count"],
        )
    except ValueError as exc:
        raise BankError(f"instance {iid}: {exc}") from exc
    if rec.pixel_count < 1 or not rec.is_tight():
        raise BankError(f"instance {iid}: mask is empty or not tight to its box")
    return rec


def load_bank(directory) -> InstanceBank:
    """Read and validate a bank written by :func:`save_bank`."""
    directory = Path(directory)
    if (directory / PARTIAL_MARKER).exists():
        raise BankError(f"{directory} holds an incomplete write")
    for name in (CLASSMAP, MANIFEST):
        if not (directory / name).is_file():
            raise BankError(f"{directory} is missing {name}")
    class_map = ClassMap.load(directory / CLASSMAP)
    per_class: list[list[InstanceRecord]] = [[] for _ in range(class_map.class_count)]
    seen: set[str] = set()
    data = directory / DATA_DIR
    with open(directory / MANIFEST) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
                iid = entry["id"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise BankError(f"{MANIFEST} line {lineno}: malformed entry ({exc})") from exc
            if not isinstance(iid, str) or not _ID_RE.match(iid):
                raise BankError(f"{MANIFEST} line {lineno}: invalid id {iid!r}")
            if iid in seen:
                raise BankError(f"{MANIFEST} line {lineno}: duplicate id {iid}")
            seen.add(iid)
            try:
                rec = _read_record(data, entry, class_map)
            except KeyError as exc:
                raise BankError(f"instance {iid}: manifest entry lacks {exc}") from exc
            per_class[rec.class_id].append(rec)
    return InstanceBank(class_map, per_class)


@dataclass(frozen=True)
class ClassStats:
    class_id: int
    name: str
    instance_count: int
    total_pixels: int
    min_pixels: int
    median_pixels: float
    max_pixels: int


def bank_stats(bank: InstanceBank) -> list[ClassStats]:
    """Per-class size summary; classes without instances report zeros."""
    out = []
    for c, recs in enumerate(bank.per_class):
        sizes = np.array([r.pixel_count for r in recs], dtype=np.int64)
        if len(sizes):
            row = (len(sizes), int(sizes.sum()), int(sizes.min()), float(np.median(sizes)), int(sizes.max()))
        else:
            row = (0, 0, 0, 0.0, 0)
        out.append(ClassStats(c, bank.class_map.names[c], *row))
    return out
