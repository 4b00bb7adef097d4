import json

import numpy as np
import pytest

from segpaste.classifier import SoftmaxPixelClassifier
from segpaste.core import Raster, Sample, SemanticMask
from segpaste.dataset import class_histogram, load_manifest, load_samples
from segpaste.demo import (
    ExperimentConfig,
    SyntheticConfig,
    Variant,
    evaluate_classifier,
    format_report,
    gen_synthetic,
    generate_split,
    run_experiment,
    variant_grid,
    train_pixel_classifier,
    tree_digest,
    write_report,
)
from segpaste.extraction import InstanceExtractor
from segpaste.paste import AugmentConfig

SMALL = SyntheticConfig(image_size=32, images_per_split=(8, 4), rare_class_pixel_fraction=0.02)


def test_generation_is_deterministic(tmp_path):
    gen_synthetic(SMALL, tmp_path / "a")
    gen_synthetic(SMALL, tmp_path / "b")
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")
    gen_synthetic(SyntheticConfig(image_size=32, images_per_split=(8, 4), rare_class_pixel_fraction=0.02, seed=1), tmp_path / "c")
    assert tree_digest(tmp_path / "a") != tree_digest(tmp_path / "c")


def test_rare_share_near_target(tmp_path):
    cfg = SyntheticConfig()
    train, _ = gen_synthetic(cfg, tmp_path)
    hist = class_histogram(load_manifest(train), cfg.class_map)
    share = hist[cfg.rare_class] / hist.sum()
    assert 0.005 <= share <= 0.02
    assert (hist > 0).all()


def test_single_class_config(tmp_path):
    cfg = SyntheticConfig(class_count=1, image_size=16, images_per_split=(2, 1))
    train, _ = gen_synthetic(cfg, tmp_path)
    assert class_histogram(load_manifest(train), cfg.class_map).tolist() == [2 * 16 * 16]
    assert cfg.rare_class is None


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        SyntheticConfig(rare_class_pixel_fraction=0.6)
    with pytest.raises(ValueError):
        SyntheticConfig(band_mean_per_class=((0.0,),))
    with pytest.raises(ValueError, match="achievable"):
        gen_synthetic(SyntheticConfig(image_size=8, rare_class_pixel_fraction=0.001), tmp_path)


def test_default_means_separate_classes():
    m = SyntheticConfig().means()
    assert m.shape == (6, 4)
    assert len({tuple(row) for row in m}) == 6


def test_written_dataset_layout(tmp_path):
    train, test = gen_synthetic(SMALL, tmp_path)
    assert json.loads((tmp_path / "classmap.json").read_text())["classes"][0] == {"id": 0, "name": "background"}
    samples = load_samples(load_manifest(train))
    assert len(samples) == 8 and samples[0].image.bands == 4
    assert samples[0].image.encoding == "f32"
    assert len({s.aoi_id for s in samples}) == 2


def test_zero_epochs_gives_zero_weights():
    model = train_pixel_classifier(generate_split(SMALL, "train"), None, None, epochs=0)
    assert not model.weights_.any()


def test_training_is_deterministic_and_augmentation_matters():
    train = generate_split(SMALL, "train")
    bank = InstanceExtractor().fit(train, SMALL.class_map).bank_
    aug = AugmentConfig(n_paste=5)
    a = train_pixel_classifier(train, bank, aug, epochs=2, seed=1).weights_
    b = train_pixel_classifier(train, bank, aug, epochs=2, seed=1).weights_
    base = train_pixel_classifier(train, bank, None, epochs=2, seed=1).weights_
    assert np.array_equal(a, b)
    assert not np.array_equal(a, base)
    with pytest.raises(ValueError, match="bank"):
        train_pixel_classifier(train, None, aug, epochs=1)
    with pytest.raises(ValueError, match="empty"):
        train_pixel_classifier([], None, None)


def constant_sample(value, cls, bands=2):
    return Sample(Raster(np.full((bands, 4, 4), float(value))), SemanticMask(np.full((4, 4), cls)))


def test_background_only_model_on_background_data():
    model = SoftmaxPixelClassifier(n_classes=2, epochs=0).fit(np.ones((2, 2)), [0, 1])
    model.weights_[0, -1] = 1.0
    rep = evaluate_classifier(model, [constant_sample(0.3, 0)])
    assert rep["miou"] == 1.0 and rep["iou"]["1"] is None


def test_random_model_scores_below_perfect(nprng):
    data = [constant_sample(0.0, 0), constant_sample(1.0, 1)]
    perfect = SoftmaxPixelClassifier(n_classes=2, epochs=0).fit(np.ones((2, 2)), [0, 1])
    perfect.weights_[:] = [[-5, 0, 2.5], [5, 0, -2.5]]
    random = SoftmaxPixelClassifier(n_classes=2, epochs=0).fit(np.ones((2, 2)), [0, 1])
    random.weights_[:] = nprng.normal(size=(2, 3))
    assert evaluate_classifier(perfect, data)["miou"] == 1.0
    assert evaluate_classifier(random, data)["miou"] < 1.0


def test_evaluate_band_mismatch():
    model = SoftmaxPixelClassifier(epochs=0).fit(np.ones((2, 3)), [0, 1])
    with pytest.raises(ValueError, match="bands"):
        evaluate_classifier(model, [constant_sample(0, 0, bands=2)])


def test_variant_grid():
    names = [v.name for v in variant_grid()]
    assert names[0] == "baseline" and len(names) == 7
    assert {(v.n_paste, v.pre_paste_augment) for v in variant_grid()[1:]} == {
        (n, p) for n in (10, 100, 1000) for p in (True, False)
    }


def test_small_experiment_report_shape(tmp_path):
    cfg = ExperimentConfig(
        synthetic=SMALL,
        variants=(Variant("baseline", 0), Variant("C&P N=5", 5), Variant("C&P N=5 +pre", 5, True)),
        seeds=(0, 1),
        epochs=2,
    )
    rep = run_experiment(cfg)
    assert len(rep["rows"]) == 6 and len(rep["summary"]) == 3
    assert {r["dataset_sha256"] for r in rep["rows"]} == {rep["dataset_sha256"]}
    assert rep["rare_class"] == "rare"
    s = rep["summary"][1]
    mious = [r["miou"] for r in rep["rows"] if r["variant"] == "C&P N=5"]
    assert s["miou_mean"] == pytest.approx(np.mean(mious))
    assert s["miou_std"] == pytest.approx(np.std(mious, ddof=1))
    assert set(s["iou_mean"]) == set(rep["class_names"])
    j, t = write_report(rep, tmp_path)
    body = json.loads(j.read_text())
    assert "runtime_seconds" not in body and body["rows"][0]["variant"] == "baseline"
    text = t.read_text()
    assert text == format_report(rep)
    assert "C&P N=5 +pre" in text and "mIoU mean (std)" in text


def test_experiment_dataset_matches_generator(tmp_path):
    cfg = ExperimentConfig(synthetic=SMALL, variants=(Variant("baseline", 0),), seeds=(0,), epochs=1)
    rep = run_experiment(cfg, tmp_path / "run")
    gen_synthetic(SMALL, tmp_path / "direct")
    assert rep["dataset_sha256"] == tree_digest(tmp_path / "direct")
