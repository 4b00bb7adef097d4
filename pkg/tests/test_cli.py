import json

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import MASK_3X3
from segpaste.cli import cli
from segpaste.core import ClassMap, Raster, SemanticMask
from segpaste.dataset import ManifestEntry, write_manifest
from segpaste.demo import tree_digest
from segpaste.formats import read_label_mask, write_label_mask, write_raster


def run(*args, ok=True):
    res = CliRunner().invoke(cli, [str(a) for a in args], catch_exceptions=False)
    if ok:
        assert res.exit_code == 0, res.output
    return res


def dataset(root, masks, aois=None, bands=2):
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, m in enumerate(masks):
        m = np.asarray(m, dtype=np.uint8)
        img, msk = root / f"img{i}.msra", root / f"mask{i}.mskl"
        write_raster(img, Raster(np.arange(bands * m.size, dtype=float).reshape(bands, *m.shape) + i))
        write_label_mask(msk, SemanticMask(m))
        entries.append(ManifestEntry(f"s{i}", img, msk, aois[i] if aois else f"aoi{i}", "2018-01-01"))
    write_manifest(root / "manifest.csv", entries)
    n = max(int(np.max(np.where(np.asarray(m) == 255, 0, m))) for m in masks) + 1
    ClassMap(tuple(f"c{c}" for c in range(max(n, 2)))).save(root / "classmap.json")
    return root / "manifest.csv", root / "classmap.json"


@pytest.fixture
def small(tmp_path):
    rng = np.random.default_rng(4)
    masks = [rng.integers(0, 3, size=(12, 12)) for _ in range(5)]
    man, cm = dataset(tmp_path / "data", masks)
    run("extract", man, cm, tmp_path / "bank")
    return tmp_path, man, cm


def test_extract_worked_example(tmp_path):
    man, cm = dataset(tmp_path, [MASK_3X3])
    out = json.loads(run("extract", man, cm, tmp_path / "bank").output)
    assert out == {"total": 4, "per_class": {"c0": 2, "c1": 1, "c2": 1}}
    out = json.loads(run("extract", man, cm, tmp_path / "bank2", "--min-pixels", "2").output)
    assert out["total"] == 3
    out = json.loads(run("extract", man, cm, tmp_path / "bank3", "--connectivity", "8").output)
    assert out["total"] == 3


def test_extract_unreadable_mask_names_path(tmp_path):
    man, cm = dataset(tmp_path, [MASK_3X3])
    (tmp_path / "mask0.mskl").write_bytes(b"garbage")
    res = run("extract", man, cm, tmp_path / "bank", ok=False)
    assert res.exit_code != 0 and "mask0.mskl" in res.output


def test_extract_refuses_existing_bank(tmp_path):
    man, cm = dataset(tmp_path, [MASK_3X3])
    run("extract", man, cm, tmp_path / "bank")
    assert run("extract", man, cm, tmp_path / "bank", ok=False).exit_code != 0
    run("extract", man, cm, tmp_path / "bank", "--overwrite")


def test_noop_augment_is_byte_identical(small):
    tmp, man, _ = small
    run("augment", man, tmp / "bank", tmp / "out", "--n-paste", 0, "--post-augment", "off")
    for i in range(5):
        assert (tmp / "out" / "images" / f"s{i}.msra").read_bytes() == (tmp / "data" / f"img{i}.msra").read_bytes()
        assert (tmp / "out" / "masks" / f"s{i}.mskl").read_bytes() == (tmp / "data" / f"mask{i}.mskl").read_bytes()


def test_augment_rerun_threads_and_seed(small):
    tmp, man, _ = small
    flags = ["--n-paste", 7, "--pre-paste-augment", "on"]
    run("augment", man, tmp / "bank", tmp / "a", *flags)
    run("augment", man, tmp / "bank", tmp / "b", *flags)
    run("--threads", 4, "augment", man, tmp / "bank", tmp / "c", *flags)
    run("augment", man, tmp / "bank", tmp / "d", *flags, "--seed", 9)
    assert tree_digest(tmp / "a") == tree_digest(tmp / "b") == tree_digest(tmp / "c")
    assert tree_digest(tmp / "a") != tree_digest(tmp / "d")
    log = json.loads((tmp / "a" / "events" / "s0.json").read_text())
    assert len(log["events"]) == 7 and log["seed"] == 0
    assert set(log["events"][0]) == {"instance_id", "class_id", "transform", "top_left"}
    assert (tmp / "a" / "manifest.csv").read_text().startswith("sample_id,")


def test_augment_empty_bank_fails(tmp_path):
    man, cm = dataset(tmp_path / "d", [np.full((3, 3), 255)])
    run("extract", man, cm, tmp_path / "bank")
    res = run("augment", man, tmp_path / "bank", tmp_path / "out", "--n-paste", 1, ok=False)
    assert res.exit_code != 0 and "empty" in res.output
    assert not (tmp_path / "out").exists()


def test_eval_examples(tmp_path):
    man, cm = dataset(tmp_path, [[[0, 0], [1, 1]]])
    pred = tmp_path / "pred"
    pred.mkdir()
    write_label_mask(pred / "s0.mskl", SemanticMask([[0, 1], [1, 1]]))
    rep = json.loads(run("eval", man, pred, cm, "--output", tmp_path / "r.json").output)
    assert rep["miou"] == 7 / 12
    assert json.loads((tmp_path / "r.json").read_text()) == rep
    write_label_mask(pred / "s0.mskl", read_label_mask(tmp_path / "mask0.mskl"))
    assert json.loads(run("eval", man, pred, cm).output)["miou"] == 1.0


def test_eval_missing_prediction(tmp_path):
    man, cm = dataset(tmp_path, [[[0]], [[1]]])
    pred = tmp_path / "pred"
    pred.mkdir()
    write_label_mask(pred / "s0.mskl", SemanticMask([[0]]))
    res = run("eval", man, pred, cm, ok=False)
    assert res.exit_code != 0 and "s1" in res.output


def test_split_two_aois(tmp_path):
    man, cm = dataset(tmp_path, [[[0, 1]], [[1, 0]]])
    out = json.loads(run("split", man, cm, "--val-fraction", 0.5).output)
    assert sorted(out["train_ids"] + out["val_ids"]) == ["s0", "s1"]
    assert len(out["val_ids"]) == 1
    again = json.loads(run("split", man, cm, "--val-fraction", 0.5).output)
    assert again == out


def test_split_infeasible_exits_nonzero(tmp_path):
    man, cm = dataset(tmp_path, [[[0, 1]], [[0, 0]]])
    res = run("split", man, cm, "--val-fraction", 0.5, "--max-attempts", 10, ok=False)
    assert res.exit_code != 0 and "c1" in res.output


def test_stats_single_mask(tmp_path):
    man, cm = dataset(tmp_path, [[[0, 0], [1, 255]]])
    run("extract", man, cm, tmp_path / "bank")
    out = json.loads(run("stats", man, cm, "--bank", tmp_path / "bank").output)
    assert out["histogram"] == {"0": 2, "1": 1}
    assert out["total_pixels"] == 3
    assert [b["instance_count"] for b in out["bank"]] == [1, 1]


def test_help_prints_defaults():
    text = run("augment", "--help").output
    assert "--n-paste" in text and "default: 100" in text


def test_invalid_option_writes_nothing(small):
    tmp, man, _ = small
    res = run("augment", man, tmp / "bank", tmp / "out", "--flip-probability", 2, ok=False)
    assert res.exit_code == 2 and not (tmp / "out").exists()


def test_synth_and_demo_smoke(tmp_path):
    small = ["--image-size", 24, "--train-images", 4, "--test-images", 2, "--rare-fraction", 0.03]
    out = json.loads(run("synth", tmp_path / "syn", *small).output)
    assert (tmp_path / "syn" / "classmap.json").exists() and out["train"].endswith("manifest.csv")
    text = run("demo", "--out-dir", tmp_path / "demo", "--seeds", 2, "--epochs", 1, "--n-paste", 10, "--n-paste", 100,
               "--pre-paste-augment", "on", "--pre-paste-augment", "off", *small).output
    report = json.loads((tmp_path / "demo" / "report.json").read_text())
    assert len(report["rows"]) == 5 * 2 and len(report["summary"]) == 5
    assert "C&P N=100 +pre" in text
