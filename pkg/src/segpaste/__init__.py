"""Cut-and-Paste augmentation for semantic segmentation of multispectral rasters."""

from .bank import BankError, InstanceBank, bank_stats, load_bank, save_bank
from .classifier import SoftmaxPixelClassifier
from .core import IGNORE, ClassMap, Raster, Rng, RngState, Sample, SemanticMask, derive_rng
from .dataset import (
    DatasetManifest,
    ManifestEntry,
    class_histogram,
    load_manifest,
    split_dataset,
    write_manifest,
)
from .extraction import ComponentLabeling, InstanceExtractor, InstanceRecord, connected_components, extract_instances
from .metrics import ConfusionMatrix, accumulate_confusion, iou_per_class, miou
from .paste import (
    AugmentConfig,
    CutPasteAugmenter,
    PasteEvent,
    Transform,
    augment_sample,
    paste,
    pre_paste_transform,
    sample_instance,
)

__version__ = "0.1.0"

__all__ = [
    "BankError",
    "InstanceBank",
    "bank_stats",
    "load_bank",
    "save_bank",
    "SoftmaxPixelClassifier",
    "IGNORE",
    "ClassMap",
    "Raster",
    "Rng",
    "RngState",
    "Sample",
    "SemanticMask",
    "derive_rng",
    "DatasetManifest",
    "ManifestEntry",
    "class_histogram",
    "load_manifest",
    "split_dataset",
    "write_manifest",
    "ComponentLabeling",
    "InstanceExtractor",
    "InstanceRecord",
    "connected_components",
    "extract_instances",
    "ConfusionMatrix",
    "accumulate_confusion",
    "iou_per_class",
    "miou",
    "AugmentConfig",
    "CutPasteAugmenter",
    "PasteEvent",
    "Transform",
    "augment_sample",
    "paste",
    "pre_paste_transform",
    "sample_instance",
]
