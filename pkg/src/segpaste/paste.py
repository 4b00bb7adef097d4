"""Instance pasting: class-uniform sampling, transforms, placement and the augmenter."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .bank import InstanceBank
from .core import Raster, Rng, RngState, Sample, SemanticMask, derive_rng
from .extraction import InstanceExtractor, InstanceRecord
from .parallel import ordered_map

PLACEMENT_POLICIES = ("full-fit",)


@dataclass(frozen=True)
class AugmentConfig:
    n_paste: int = 0
    pre_paste_augment: bool = False
    post_augment: bool = True
    flip_probability: float = 0.5
    placement_policy: str = "full-fit"
    global_seed: int = 0

    def __post_init__(self):
        if self.n_paste < 0:
            raise ValueError(f"n_paste must be >= 0, got {self.n_paste}")
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ValueError(f"flip_probability must be in [0, 1], got {self.flip_probability}")
        if self.placement_policy not in PLACEMENT_POLICIES:
            raise ValueError(f"unknown placement policy {self.placement_policy!r}")


@dataclass(frozen=True)
class Transform:
    """Horizontal flip, then vertical flip, then counter-clockwise quarter turns."""

    hflip: bool = False
    vflip: bool = False
    quarter_turns: int = 0

    @property
    def is_identity(self) -> bool:
        return not (self.hflip or self.vflip or self.quarter_turns % 4)

    def apply(self, a: np.ndarray) -> np.ndarray:
        """Transform the last two axes (rows, columns) of ``a``."""
        if self.hflip:
            a = a[..., :, ::-1]
        if self.vflip:
            a = a[..., ::-1, :]
        return np.rot90(a, self.quarter_turns % 4, axes=(-2, -1))


IDENTITY = Transform()


@dataclass(frozen=True)
class PasteEvent:
    instance_id: str
    class_id: int
    transform: Transform
    top_left: tuple[int, int]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["top_left"] = list(self.top_left)
        return d


@dataclass(frozen=True, eq=False)
class AugmentResult:
    sample: Sample
    events: list[PasteEvent]
    post_transform: Transform
    pasted: Sample = field(repr=False)  # state after pasting, before the post transform


def draw_transform(rng: Rng, flip_probability: float = 0.5) -> Transform:
    hflip = rng.bernoulli(flip_probability)
    vflip = rng.bernoulli(flip_probability)
    return Transform(hflip, vflip, rng.integers(4))


def apply_transform(instance: InstanceRecord, transform: Transform) -> InstanceRecord:
    if transform.is_identity:
        return instance
    return InstanceRecord(
        class_id=instance.class_id,
        patch=Raster(transform.apply(instance.patch.samples), encoding=instance.patch.encoding),
        mask=transform.apply(instance.mask),
        source_sample_id=instance.source_sample_id,
        source_bbox=instance.source_bbox,
        instance_id=instance.instance_id,
    )


def fit_to(instance: InstanceRecord, height: int, width: int) -> InstanceRecord:
    """Center-crop ``instance`` so it is no larger than ``height`` x ``width``."""
    h, w = instance.height, instance.width
    if h <= height and w <= width:
        return instance
    top = max(0, (h - height) // 2)
    left = max(0, (w - width) // 2)
    rows = slice(top, top + min(h, height))
    cols = slice(left, left + min(w, width))
    return InstanceRecord(
        class_id=instance.class_id,
        patch=Raster(instance.patch.samples[:, rows, cols], encoding=instance.patch.encoding),
        mask=instance.mask[rows, cols],
        source_sample_id=instance.source_sample_id,
        source_bbox=instance.source_bbox,
        instance_id=instance.instance_id,
    )


def sample_instance(bank: InstanceBank, rng: Rng | RngState) -> InstanceRecord:
    """Pick a class uniformly among non-empty classes, then an instance uniformly within it."""
    rng = Rng.coerce(rng)
    classes = bank.nonempty_classes
    if not classes:
        raise ValueError("cannot sample from an empty instance bank")
    recs = bank.per_class[classes[rng.integers(len(classes))]]
    return recs[rng.integers(len(recs))]


def pre_paste_transform(
    instance: InstanceRecord, rng: Rng | RngState, enabled: bool, flip_probability: float = 0.5
) -> InstanceRecord:
    if not enabled:
        return instance
    return apply_transform(instance, draw_transform(Rng.coerce(rng), flip_probability))


def _paste_into(image: np.ndarray, labels: np.ndarray, instance: InstanceRecord, top_left) -> None:
    r, c = top_left
    h, w = instance.height, instance.width
    m = instance.mask
    image[:, r : r + h, c : c + w][:, m] = instance.patch.samples[:, m]
    labels[r : r + h, c : c + w][m] = instance.class_id


def _check_paste(sample: Sample, instance: InstanceRecord, top_left) -> None:
    if instance.bands != sample.image.bands:
        raise ValueError(f"instance has {instance.bands} bands, sample has {sample.image.bands}")
    r, c = top_left
    if not (0 <= r <= sample.mask.height - instance.height and 0 <= c <= sample.mask.width - instance.width):
        raise ValueError(
            f"{instance.height}x{instance.width} instance at {tuple(top_left)} does not fit "
            f"a {sample.mask.height}x{sample.mask.width} sample"
        )


def paste(sample: Sample, instance: InstanceRecord, top_left: tuple[int, int]) -> Sample:
    """Hard, mask-shaped paste; pixels outside the instance mask are untouched."""
    _check_paste(sample, instance, top_left)
    image = np.array(sample.image.samples)
    labels = np.array(sample.mask.values)
    _paste_into(image, labels, instance, top_left)
    return Sample(Raster(image, sample.image.encoding), SemanticMask(labels), sample.sample_id, sample.aoi_id)


def augment_sample_detailed(
    sample: Sample, bank: InstanceBank | None, config: AugmentConfig, rng: Rng | RngState
) -> AugmentResult:
    """Run ``config.n_paste`` paste rounds and the optional post transform.

    Draw order per round: class, instance, [pre-paste transform], row, column.
    The post transform (hflip p=0.5, vflip p=0.5, quarter turns uniform in
    0..3) is drawn last. An odd number of quarter turns swaps height and
    width of non-square samples.
    """
    rng = Rng.coerce(rng)
    if config.n_paste > 0 and (bank is None or bank.total_count == 0):
        raise ValueError("n_paste > 0 requires a non-empty instance bank")
    height, width = sample.mask.height, sample.mask.width
    image = np.array(sample.image.samples)
    labels = np.array(sample.mask.values)
    events = []
    for _ in range(config.n_paste):
        inst = sample_instance(bank, rng)
        if inst.bands != sample.image.bands:
            raise ValueError(f"instance {inst.instance_id} has {inst.bands} bands, sample has {sample.image.bands}")
        t = draw_transform(rng, config.flip_probability) if config.pre_paste_augment else IDENTITY
        placed = fit_to(apply_transform(inst, t), height, width)
        top_left = (rng.integers(height - placed.height + 1), rng.integers(width - placed.width + 1))
        _paste_into(image, labels, placed, top_left)
        events.append(PasteEvent(inst.instance_id, inst.class_id, t, top_left))

    pasted = Sample(Raster(image, sample.image.encoding), SemanticMask(labels), sample.sample_id, sample.aoi_id)
    post = draw_transform(rng, 0.5) if config.post_augment else IDENTITY
    if post.is_identity:
        return AugmentResult(pasted, events, post, pasted)
    out = Sample(
        Raster(post.apply(image), sample.image.encoding),
        SemanticMask(post.apply(labels)),
        sample.sample_id,
        sample.aoi_id,
    )
    return AugmentResult(out, events, post, pasted)


def augment_sample(
    sample: Sample, bank: InstanceBank | None, config: AugmentConfig, rng: Rng | RngState
) -> tuple[Sample, list[PasteEvent]]:
    res = augment_sample_detailed(sample, bank, config, rng)
    return res.sample, res.events


def replay_events(sample: Sample, bank: InstanceBank, events: Sequence[PasteEvent]) -> Sample:
    """Re-apply a paste log; reproduces the sample as it was before the post transform."""
    by_id = {r.instance_id: r for r in bank.records()}
    for ev in events:
        inst = fit_to(apply_transform(by_id[ev.instance_id], ev.transform), sample.mask.height, sample.mask.width)
        sample = paste(sample, inst, ev.top_left)
    return sample


class CutPasteAugmenter(TransformerMixin, BaseEstimator):
    """Cut-and-Paste augmentation as a transformer over samples.

    Parameters
    ----------
    n_paste : int, default=100
        Instances pasted per sample.
    pre_paste_augment : bool, default=False
        Flip/rotate each instance before pasting.
    post_augment : bool, default=True
        Flip/rotate the whole sample after pasting.
    flip_probability : float, default=0.5
        Per-axis flip probability of the pre-paste transform.
    seed : int, default=0
        Global seed; sample ``i`` in epoch ``e`` uses ``derive_rng(seed, e, i)``.
    n_jobs : int, default=1
        Threads used by :meth:`transform`; results do not depend on it.

    Attributes
    ----------
    bank_ : InstanceBank
    """

    def __init__(
        self,
        n_paste: int = 100,
        pre_paste_augment: bool = False,
        post_augment: bool = True,
        flip_probability: float = 0.5,
        seed: int = 0,
        n_jobs: int = 1,
    ):
        self.n_paste = n_paste
        self.pre_paste_augment = pre_paste_augment
        self.post_augment = post_augment
        self.flip_probability = flip_probability
        self.seed = seed
        self.n_jobs = n_jobs

    @property
    def config(self) -> AugmentConfig:
        return AugmentConfig(
            n_paste=self.n_paste,
            pre_paste_augment=self.pre_paste_augment,
            post_augment=self.post_augment,
            flip_probability=self.flip_probability,
            global_seed=self.seed,
        )

    def fit(self, X: InstanceBank | Iterable[Sample], y=None):
        """Use ``X`` as the bank, or extract one from ``X`` if it is a sample list."""
        self.config  # validates parameters
        self.bank_ = X if isinstance(X, InstanceBank) else InstanceExtractor().fit(X).bank_
        return self

    def transform_detailed(self, X: Sequence[Sample], epoch: int = 0) -> list[AugmentResult]:
        check_is_fitted(self, "bank_")
        cfg = self.config
        jobs = list(enumerate(X))
        return ordered_map(
            lambda job: augment_sample_detailed(job[1], self.bank_, cfg, derive_rng(self.seed, epoch, job[0])),
            jobs,
            self.n_jobs,
        )

    def transform(self, X: Sequence[Sample], epoch: int = 0) -> list[Sample]:
        return [r.sample for r in self.transform_detailed(X, epoch)]
