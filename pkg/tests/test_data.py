import pytest
import torch

from spheregen.data import (
    Corpus,
    LABELS,
    SceneRecipe,
    build_corpus,
    load_image,
    load_manifest,
    render_scene,
    save_image,
)
from spheregen.geometry import default_registry, symmetry_transform

REG = {t.name: t for t in default_registry()}


def test_render_shape_and_range():
    img = render_scene(SceneRecipe("asym", seed=0, height=32))
    assert img.shape == (3, 32, 64)
    assert torch.all(img >= 0) and torch.all(img <= 1)


def test_render_deterministic():
    a = render_scene(SceneRecipe("rot180", seed=5, height=32))
    b = render_scene(SceneRecipe("rot180", seed=5, height=32))
    assert torch.equal(a, b)


@pytest.mark.parametrize("label", [l for l in LABELS if l != "asym"])
def test_labeled_symmetry_is_exact(label):
    img = render_scene(SceneRecipe(label, seed=3, height=32))
    assert torch.equal(symmetry_transform(img, REG[label]), img)


def test_asymmetric_scene_differs_under_all_transforms():
    img = render_scene(SceneRecipe("asym", seed=11, height=32))
    for t in REG.values():
        diff = (symmetry_transform(img, t) - img).abs().sum().item()
        assert diff > 1.0


def test_symmetry_survives_png_roundtrip(tmp_path):
    img = render_scene(SceneRecipe("plane90", seed=4, height=32))
    save_image(img, tmp_path / "x.png")
    loaded = load_image(tmp_path / "x.png")
    assert torch.equal(symmetry_transform(loaded, REG["plane90"]), loaded)


def test_build_corpus_counts_and_splits(tmp_path):
    out = build_corpus(tmp_path / "corpus", n=60, seed=1, height=32)
    records = load_manifest(out)
    assert len(records) == 60
    counts = {}
    for rec in records:
        counts[rec["label"]] = counts.get(rec["label"], 0) + 1
    assert set(counts) == set(LABELS)
    assert all(abs(c - 10) <= 1 for c in counts.values())
    splits = {}
    for rec in records:
        splits[rec["split"]] = splits.get(rec["split"], 0) + 1
    assert splits["train"] > splits["val"] > splits["test"] >= 1
    for rec in records[:5]:
        img = load_image(out / rec["file"])
        assert img.shape[-1] == 2 * img.shape[-2]


def test_build_corpus_reproducible(tmp_path):
    a = build_corpus(tmp_path / "a", n=12, seed=7, height=32)
    b = build_corpus(tmp_path / "b", n=12, seed=7, height=32)
    ra = load_manifest(a)
    rb = load_manifest(b)
    assert [r["label"] for r in ra] == [r["label"] for r in rb]
    assert [r["seed"] for r in ra] == [r["seed"] for r in rb]
    assert torch.equal(load_image(a / ra[0]["file"]), load_image(b / rb[0]["file"]))


def test_build_corpus_refuses_nonempty(tmp_path):
    target = tmp_path / "c"
    build_corpus(target, n=6, seed=0, height=32)
    with pytest.raises(FileExistsError):
        build_corpus(target, n=6, seed=0, height=32)
    build_corpus(target, n=6, seed=0, height=32, force=True)


def test_build_corpus_invalid_mix(tmp_path):
    with pytest.raises(ValueError):
        build_corpus(tmp_path / "d", n=6, mix={"nonsense": 1.0})


def test_corpus_accessor(tmp_path):
    out = build_corpus(tmp_path / "e", n=13, seed=2, height=32)
    train = Corpus(out, split="train")
    assert len(train) > 0
    img = train.image(0)
    assert img.shape == (3, 32, 64)
    assert train.label(0) in LABELS
    with pytest.raises(ValueError):
        Corpus(out, split="nope")
