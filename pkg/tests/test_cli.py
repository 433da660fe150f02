import hashlib
import json

import pytest
import torch
import yaml

from spheregen.cli import S_PRESETS, main
from spheregen.data import load_image, render_scene, save_image, SceneRecipe
from spheregen.training import load_checkpoint

TINY_CONFIG = {
    "train": {"batch_size": 2, "symmetry_control": False},
    "model": {"height": 32, "width": 64, "channels": 8},
}


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "corpus"
    assert main(["make-dataset", "--out", str(out), "--n", "26",
                 "--seed", "3", "--height", "32"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, corpus_dir):
    work = tmp_path_factory.mktemp("cli-train")
    cfg_path = work / "tiny.yaml"
    cfg_path.write_text(yaml.safe_dump(TINY_CONFIG))
    rc = main(["train", "--corpus", str(corpus_dir), "--workdir", str(work / "run"),
               "--config", str(cfg_path), "--steps", "2", "--seed", "0"])
    assert rc == 0
    return work / "run" / "checkpoint.pt", cfg_path


def _manifest_hash(path):
    return hashlib.sha256((path / "manifest.jsonl").read_bytes()).hexdigest()


def test_make_dataset_reproducible(tmp_path, capsys):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main(["make-dataset", "--out", str(a), "--n", "10", "--seed", "7",
                 "--height", "32"]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["n"] == 10
    assert main(["make-dataset", "--out", str(b), "--n", "10", "--seed", "7",
                 "--height", "32"]) == 0
    assert _manifest_hash(a) == _manifest_hash(b)


def test_make_dataset_refuses_overwrite(tmp_path, capsys):
    out = tmp_path / "c"
    assert main(["make-dataset", "--out", str(out), "--n", "6", "--height", "32"]) == 0
    assert main(["make-dataset", "--out", str(out), "--n", "6", "--height", "32"]) == 3
    assert "data error" in capsys.readouterr().err
    assert main(["make-dataset", "--out", str(out), "--n", "6", "--height", "32",
                 "--force"]) == 0


def test_make_dataset_bad_mix_exit_code(tmp_path):
    assert main(["make-dataset", "--out", str(tmp_path / "d"), "--n", "6",
                 "--mix", "nonsense=1"]) == 3


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["make-dataset", "--n", "6"])  # missing --out
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_crop_nfov(tmp_path, capsys):
    src = tmp_path / "pano.png"
    save_image(render_scene(SceneRecipe("rot180", seed=0, height=32)), src)
    partial = tmp_path / "partial.png"
    mask = tmp_path / "mask.png"
    assert main(["crop-nfov", "--input", str(src), "--fov", "90",
                 "--out-partial", str(partial), "--out-mask", str(mask)]) == 0
    info = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert info["fov"] == 90.0
    img = load_image(partial)
    m = load_image(mask)[0]
    assert img.shape == (3, 32, 64)
    assert 0 < m.sum().item() < m.numel()
    # filled region carries the neutral fill value
    outside = img[:, m < 0.5]
    assert torch.allclose(outside, torch.full_like(outside, 0.5), atol=0.01)


def test_crop_nfov_rejects_bad_aspect(tmp_path):
    bad = tmp_path / "square.png"
    save_image(torch.rand(3, 32, 32), bad)
    assert main(["crop-nfov", "--input", str(bad), "--out-partial",
                 str(tmp_path / "p.png"), "--out-mask", str(tmp_path / "m.png")]) == 3


def test_train_writes_checkpoint_and_log(trained):
    ckpt, _ = trained
    assert ckpt.exists()
    state = load_checkpoint(ckpt)
    assert state["payload"]["step"] == 2
    assert (ckpt.parent / "metrics.jsonl").exists()


def test_train_rejects_unknown_config_key(tmp_path, corpus_dir):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text(yaml.safe_dump({"train": {"warp_speed": 9}}))
    assert main(["train", "--corpus", str(corpus_dir), "--workdir",
                 str(tmp_path / "w"), "--config", str(cfg), "--steps", "1"]) == 3


def test_train_flag_overrides_config(tmp_path, corpus_dir, capsys):
    cfg = tmp_path / "cfg.yaml"
    body = dict(TINY_CONFIG)
    body["train"] = dict(TINY_CONFIG["train"], steps=99)
    cfg.write_text(yaml.safe_dump(body))
    assert main(["train", "--corpus", str(corpus_dir), "--workdir",
                 str(tmp_path / "w2"), "--config", str(cfg), "--steps", "1"]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["steps"] == 1


def test_generate_with_preset(tmp_path, corpus_dir, trained, capsys):
    ckpt, _ = trained
    src = tmp_path / "pano.png"
    save_image(render_scene(SceneRecipe("plane0", seed=1, height=32)), src)
    partial = tmp_path / "partial.png"
    mask = tmp_path / "mask.png"
    assert main(["crop-nfov", "--input", str(src), "--out-partial", str(partial),
                 "--out-mask", str(mask)]) == 0
    out = tmp_path / "gen.png"
    for preset in sorted(S_PRESETS):
        assert main(["generate", "--checkpoint", str(ckpt), "--input", str(partial),
                     "--mask", str(mask), "--s-preset", preset,
                     "--out", str(out)]) == 0
    capsys.readouterr()
    assert load_image(out).shape == (3, 32, 64)


def test_generate_deterministic_across_runs(tmp_path, trained):
    ckpt, _ = trained
    src = tmp_path / "p.png"
    save_image(render_scene(SceneRecipe("rot90", seed=2, height=32)), src)
    outs = []
    for name in ("g1.png", "g2.png"):
        out = tmp_path / name
        assert main(["generate", "--checkpoint", str(ckpt), "--input", str(src),
                     "--s", "0.5,0.5,0.5,0.5,0.5", "--seed", "4",
                     "--out", str(out)]) == 0
        outs.append(load_image(out))
    assert torch.equal(outs[0], outs[1])


def test_generate_invalid_s(tmp_path, trained, capsys):
    ckpt, _ = trained
    src = tmp_path / "p.png"
    save_image(render_scene(SceneRecipe("asym", seed=3, height=32)), src)
    rc = main(["generate", "--checkpoint", str(ckpt), "--input", str(src),
               "--s", "1.2,0,0,0,0", "--out", str(tmp_path / "o.png")])
    assert rc == 3
    assert "data error" in capsys.readouterr().err
    assert main(["generate", "--checkpoint", str(ckpt), "--input", str(src),
                 "--out", str(tmp_path / "o.png")]) == 3  # neither --s nor preset


def test_generate_wrong_resolution(tmp_path, trained):
    ckpt, _ = trained
    src = tmp_path / "big.png"
    save_image(torch.rand(3, 64, 128), src)
    assert main(["generate", "--checkpoint", str(ckpt), "--input", str(src),
                 "--s-preset", "asym", "--out", str(tmp_path / "o.png")]) == 3


def test_generate_missing_checkpoint(tmp_path):
    src = tmp_path / "p.png"
    save_image(torch.rand(3, 32, 64), src)
    assert main(["generate", "--checkpoint", str(tmp_path / "none.pt"),
                 "--input", str(src), "--s-preset", "asym",
                 "--out", str(tmp_path / "o.png")]) == 3


def test_evaluate_report(tmp_path, corpus_dir, trained, capsys):
    ckpt, _ = trained
    out = tmp_path / "eval"
    assert main(["evaluate", "--checkpoint", str(ckpt), "--corpus", str(corpus_dir),
                 "--out", str(out), "--n-gen", "4"]) == 0
    capsys.readouterr()
    report = json.loads((out / "report.json").read_text())
    assert set(report) >= {"fid", "seam", "sem_sweep", "n_gen"}
    assert report["n_gen"] == 4
    assert (out / "sem_sweep.csv").read_text().startswith("target,level,median")


def test_evaluate_padding_ablation(tmp_path, corpus_dir, trained, capsys):
    ckpt, _ = trained
    out = tmp_path / "pad"
    assert main(["evaluate", "--checkpoint", str(ckpt), "--corpus", str(corpus_dir),
                 "--out", str(out), "--ablation", "padding", "--n-gen", "4"]) == 0
    capsys.readouterr()
    report = json.loads((out / "padding_ablation.json").read_text())
    assert set(report) == {"n", "seam_circular", "seam_zero_pad"}


def test_evaluate_loss_ablation(tmp_path, corpus_dir, trained, capsys):
    _, cfg_path = trained
    out = tmp_path / "loss"
    assert main(["evaluate", "--corpus", str(corpus_dir), "--out", str(out),
                 "--ablation", "loss", "--ablation-steps", "2", "--n-gen", "4",
                 "--config", str(cfg_path)]) == 0
    capsys.readouterr()
    report = json.loads((out / "loss_ablation.json").read_text())
    assert report["columns"] == ["both", "rec", "gen"]
    assert set(report["results"]) == {"both", "rec", "gen"}
    for col in report["results"].values():
        assert col["fid"] >= 0.0


def test_evaluate_plain_requires_checkpoint(tmp_path, corpus_dir):
    assert main(["evaluate", "--corpus", str(corpus_dir),
                 "--out", str(tmp_path / "x")]) == 3
