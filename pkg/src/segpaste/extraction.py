"""Connected-component decomposition of label masks and instance cutting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .core import IGNORE, ClassMap, Raster, Sample, SemanticMask


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    """Component ids per pixel plus one summary row per component.

    ``component_ids`` holds 0 for IGNORE pixels and ``1..n`` otherwise,
    numbered in raster order of each component's first pixel.
    ``class_ids``, ``pixel_counts`` and ``bboxes`` are indexed by
    ``component_index - 1``; a bbox is ``(top, left, height, width)``.
    """

    component_ids: np.ndarray
    class_ids: np.ndarray
    pixel_counts: np.ndarray
    bboxes: np.ndarray

    @property
    def n_components(self) -> int:
        return len(self.class_ids)

    @property
    def components(self) -> list[tuple[int, int, int, tuple[int, int, int, int]]]:
        return [
            (i + 1, int(c), int(n), tuple(int(v) for v in b))
            for i, (c, n, b) in enumerate(zip(self.class_ids, self.pixel_counts, self.bboxes))
        ]


def _edges(values: np.ndarray, connectivity: int) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs of adjacent same-class, non-ignore pixels."""
    h, w = values.shape
    idx = np.arange(h * w).reshape(h, w)
    valid = values != IGNORE
    offsets = [(0, 1), (1, 0)]
    if connectivity == 8:
        offsets += [(1, 1), (1, -1)]
    us, vs = [], []
    for dr, dc in offsets:
        r0, r1 = 0, h - dr
        c0, c1 = max(0, -dc), w - max(0, dc)
        a = (slice(r0, r1), slice(c0, c1))
        b = (slice(r0 + dr, r1 + dr), slice(c0 + dc, c1 + dc))
        same = valid[a] & (values[a] == values[b])
        us.append(idx[a][same])
        vs.append(idx[b][same])
    return np.concatenate(us), np.concatenate(vs)


def _union_find(n: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Root (smallest member index) of every node's component.

    Iterative min-hooking with full path shortcutting: each round hooks the
    larger root of every cross edge onto the smaller one, then compresses
    until every node points at a root. Terminates once no edge spans two
    roots. No recursion, so arbitrarily snaky components are safe.
    """
    parent = np.arange(n)
    while True:
        pu, pv = parent[u], parent[v]
        cross = pu != pv
        if not cross.any():
            return parent
        lo = np.minimum(pu[cross], pv[cross])
        hi = np.maximum(pu[cross], pv[cross])
        np.minimum.at(parent, hi, lo)
        while True:
            nxt = parent[parent]
            if np.array_equal(nxt, parent):
                break
            parent = nxt


def connected_components(mask: SemanticMask | np.ndarray, connectivity: int = 4) -> ComponentLabeling:
    """Split a label mask into maximal same-class regions.

    Two non-IGNORE pixels share a component exactly when they have the same
    class and are linked by a path of same-class pixels under 4- or
    8-adjacency. IGNORE pixels get component id 0.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    values = mask.values if isinstance(mask, SemanticMask) else np.asarray(mask)
    h, w = values.shape
    flat = values.ravel()
    u, v = _edges(values, connectivity)
    roots = _union_find(h * w, u, v)

    valid = flat != IGNORE
    pix = np.flatnonzero(valid)
    # roots are the smallest flat index in their component, so sorting roots
    # gives raster order of first pixels
    uniq, inverse = np.unique(roots[pix], return_inverse=True)
    ids = np.zeros(h * w, dtype=np.int64)
    ids[pix] = inverse + 1
    n = len(uniq)

    rows, cols = np.divmod(pix, w)
    counts = np.bincount(inverse, minlength=n)
    top = np.full(n, h, dtype=np.int64)
    left = np.full(n, w, dtype=np.int64)
    bottom = np.full(n, -1, dtype=np.int64)
    right = np.full(n, -1, dtype=np.int64)
    np.minimum.at(top, inverse, rows)
    np.minimum.at(left, inverse, cols)
    np.maximum.at(bottom, inverse, rows)
    np.maximum.at(right, inverse, cols)
    bboxes = np.stack([top, left, bottom - top + 1, right - left + 1], axis=1).reshape(n, 4)
    return ComponentLabeling(
        component_ids=ids.reshape(h, w),
        class_ids=flat[uniq].astype(np.int64),
        pixel_counts=counts.astype(np.int64),
        bboxes=bboxes,
    )


class InstanceRecord:
    """One cut-out instance: image patch, binary mask, class and provenance.

    ``mask`` has the patch's height and width; ``True`` marks instance
    pixels. ``source_bbox`` is ``(top, left, height, width)`` in the source
    sample.
    """

    __slots__ = ("class_id", "patch", "mask", "pixel_count", "source_sample_id", "source_bbox", "instance_id")

    def __init__(
        self,
        class_id: int,
        patch: Raster,
        mask,
        source_sample_id: str = "",
        source_bbox: Sequence[int] = (0, 0, 0, 0),
        instance_id: str = "",
        pixel_count: int | None = None,
    ):
        m = np.array(mask, dtype=bool, copy=True)
        if m.ndim != 2 or m.shape != (patch.height, patch.width):
            raise ValueError(
                f"mask shape {m.shape} does not match patch {patch.height}x{patch.width}"
            )
        if not 0 <= class_id < IGNORE:
            raise ValueError(f"class_id must be in [0, 254], got {class_id}")
        count = int(m.sum())
        if pixel_count is not None and pixel_count != count:
            raise ValueError(f"pixel_count {pixel_count} disagrees with mask ({count} true pixels)")
        m.flags.writeable = False
        set_ = object.__setattr__
        set_(self, "class_id", int(class_id))
        set_(self, "patch", patch)
        set_(self, "mask", m)
        set_(self, "pixel_count", count)
        set_(self, "source_sample_id", str(source_sample_id))
        set_(self, "source_bbox", tuple(int(x) for x in source_bbox))
        set_(self, "instance_id", str(instance_id))

    def __setattr__(self, name, value):
        raise AttributeError("InstanceRecord is immutable")

    @property
    def height(self) -> int:
        return self.mask.shape[0]

    @property
    def width(self) -> int:
        return self.mask.shape[1]

    @property
    def bands(self) -> int:
        return self.patch.bands

    def is_tight(self) -> bool:
        """True when the mask touches all four edges of its box."""
        m = self.mask
        return bool(m[0].any() and m[-1].any() and m[:, 0].any() and m[:, -1].any())

    def with_id(self, instance_id: str) -> "InstanceRecord":
        return InstanceRecord(
            self.class_id, self.patch, self.mask, self.source_sample_id, self.source_bbox, instance_id
        )

    def __eq__(self, other):
        if not isinstance(other, InstanceRecord):
            return NotImplemented
        return (
            self.class_id == other.class_id
            and self.instance_id == other.instance_id
            and self.source_sample_id == other.source_sample_id
            and self.source_bbox == other.source_bbox
            and self.patch == other.patch
            and np.array_equal(self.mask, other.mask)
        )

    def __repr__(self):
        return (
            f"InstanceRecord(id={self.instance_id!r}, class_id={self.class_id}, "
            f"size={self.height}x{self.width}, pixels={self.pixel_count})"
        )


def extract_instances(sample: Sample, connectivity: int = 4, min_pixels: int = 1) -> list[InstanceRecord]:
    """Cut every connected component of ``sample.mask`` out of the image.

    Records come back in component order and carry empty instance ids; the
    bank assigns ids when records are collected.
    """
    if min_pixels < 1:
        raise ValueError("min_pixels must be >= 1")
    labeling = connected_components(sample.mask, connectivity)
    image = sample.image.samples
    out = []
    for k, (cls, count, (top, left, hh, ww)) in enumerate(
        zip(labeling.class_ids, labeling.pixel_counts, labeling.bboxes), start=1
    ):
        if count < min_pixels:
            continue
        window = (slice(top, top + hh), slice(left, left + ww))
        out.append(
            InstanceRecord(
                class_id=int(cls),
                patch=Raster(image[(slice(None),) + window], encoding=sample.image.encoding),
                mask=labeling.component_ids[window] == k,
                source_sample_id=sample.sample_id,
                source_bbox=(top, left, hh, ww),
            )
        )
    return out


class InstanceExtractor(BaseEstimator):
    """Build an instance bank from training samples.

    Parameters
    ----------
    connectivity : {4, 8}, default=4
        Pixel adjacency used to join same-class pixels.
    min_pixels : int, default=1
        Components smaller than this are dropped.

    Attributes
    ----------
    bank_ : InstanceBank
        Instances from every fitted sample, ids assigned in extraction order.
    """

    def __init__(self, connectivity: int = 4, min_pixels: int = 1, n_jobs: int = 1):
        self.connectivity = connectivity
        self.min_pixels = min_pixels
        self.n_jobs = n_jobs

    def fit(self, samples: Iterable[Sample], class_map: ClassMap | None = None):
        from .bank import InstanceBank
        from .parallel import ordered_map

        samples = list(samples)
        if class_map is None:
            top = max((max(s.mask.classes_present(), default=-1) for s in samples), default=-1)
            class_map = ClassMap(tuple(f"class{i}" for i in range(max(top + 1, 1))))
        for s in samples:
            s.mask.validate(class_map)
        per_sample = ordered_map(
            lambda s: extract_instances(s, self.connectivity, self.min_pixels), samples, self.n_jobs
        )
        self.bank_ = InstanceBank.from_records(class_map, [r for recs in per_sample for r in recs])
        return self

    def transform(self, samples: Iterable[Sample]) -> list[list[InstanceRecord]]:
        return [extract_instances(s, self.connectivity, self.min_pixels) for s in samples]
