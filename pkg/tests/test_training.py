import math

import numpy as np
import pytest
import torch

from spheregen.data import Corpus, build_corpus
from spheregen.geometry import GeometryError
from spheregen.networks import Generator
from spheregen.training import (
    CheckpointError,
    TrainConfig,
    Trainer,
    generate,
    load_checkpoint,
    make_batch,
    mask_center,
    model_config_for,
    random_view,
    sample_symmetry_prior,
    save_checkpoint,
    train,
)


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return build_corpus(root / "c", n=26, seed=0, height=32)


def tiny_train_cfg(**kw):
    base = dict(steps=2, batch_size=2, seed=0, symmetry_control=False, log_every=1)
    base.update(kw)
    return TrainConfig(**base)


def tiny_model_cfg(train_cfg):
    return model_config_for(train_cfg, height=32, width=64, channels=8)


def _batch(corpus_dir, trainer, seed=0, n=2):
    corpus = Corpus(corpus_dir, split="train")
    rng = np.random.default_rng(seed)
    return make_batch(corpus, rng.integers(0, len(corpus), size=n), rng,
                      trainer.train_cfg.fill)


def _param_vector(module):
    return torch.cat([p.detach().reshape(-1).clone() for p in module.parameters()])


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(loss_mode="nonsense")
    with pytest.raises(ValueError):
        TrainConfig(preset="gpu-farm")


def test_train_step_deterministic(corpus_dir):
    results = []
    for _ in range(2):
        cfg = tiny_train_cfg()
        trainer = Trainer(tiny_model_cfg(cfg), cfg)
        batch = _batch(corpus_dir, trainer)
        results.append(trainer.train_step(batch))
    assert results[0] == results[1]


def test_train_step_updates_both_networks(corpus_dir):
    cfg = tiny_train_cfg()
    trainer = Trainer(tiny_model_cfg(cfg), cfg)
    g0 = _param_vector(trainer.model)
    d0 = _param_vector(trainer.disc)
    metrics = trainer.train_step(_batch(corpus_dir, trainer))
    assert not torch.equal(g0, _param_vector(trainer.model))
    assert not torch.equal(d0, _param_vector(trainer.disc))
    for key in ("loss_rec", "loss_gen", "loss_d", "objective", "rec_masked_l1"):
        assert math.isfinite(metrics[key])


def test_generator_step_does_not_touch_discriminator(corpus_dir):
    # freeze the discriminator optimizer: any change to D params would have to
    # leak through the generator update
    cfg = tiny_train_cfg()
    trainer = Trainer(tiny_model_cfg(cfg), cfg)
    for group in trainer.opt_d.param_groups:
        group["lr"] = 0.0
    d0 = _param_vector(trainer.disc)
    trainer.train_step(_batch(corpus_dir, trainer))
    assert torch.equal(d0, _param_vector(trainer.disc))


def test_discriminator_step_does_not_touch_generator(corpus_dir):
    cfg = tiny_train_cfg()
    trainer = Trainer(tiny_model_cfg(cfg), cfg)
    for group in trainer.opt_g.param_groups:
        group["lr"] = 0.0
    g0 = _param_vector(trainer.model)
    trainer.train_step(_batch(corpus_dir, trainer))
    assert torch.equal(g0, _param_vector(trainer.model))


def test_loss_mode_rec_only(corpus_dir):
    cfg = tiny_train_cfg(loss_mode="rec")
    trainer = Trainer(tiny_model_cfg(cfg), cfg)
    metrics = trainer.train_step(_batch(corpus_dir, trainer))
    assert metrics["loss_gen"] == 0.0
    assert metrics["loss_rec"] != 0.0


def test_loss_mode_gen_only(corpus_dir):
    cfg = tiny_train_cfg(loss_mode="gen")
    trainer = Trainer(tiny_model_cfg(cfg), cfg)
    metrics = trainer.train_step(_batch(corpus_dir, trainer))
    assert metrics["loss_rec"] == 0.0
    assert metrics["loss_gen"] != 0.0
    assert "rec_masked_l1" not in metrics


def test_symmetry_control_path(corpus_dir):
    # desk-size model with the estimator and control branch active
    cfg = tiny_train_cfg(symmetry_control=True)
    trainer = Trainer(model_config_for(cfg, channels=8), cfg)
    corpus = Corpus(corpus_dir, split="train")
    rng = np.random.default_rng(1)
    # corpus images are 32x64; the desk model wants 64x128, so upsample
    batch = make_batch(corpus, rng.integers(0, len(corpus), size=2), rng, cfg.fill)
    batch.x_g = torch.nn.functional.interpolate(batch.x_g, scale_factor=2, mode="nearest")
    batch.x_l = torch.nn.functional.interpolate(batch.x_l, scale_factor=2, mode="nearest")
    batch.mask = torch.nn.functional.interpolate(batch.mask, scale_factor=2, mode="nearest")
    metrics = trainer.train_step(batch)
    assert "logp_s" in metrics and "s_mean" in metrics
    assert 0.0 < metrics["s_mean"] < 1.0


def test_random_view_statistics():
    rng = np.random.default_rng(2)
    zs, fovs = [], []
    for _ in range(100_000):
        v = random_view(rng)
        zs.append(v.center[2])
        fovs.append(v.fov_deg)
        assert abs(sum(c * c for c in v.center) - 1.0) < 1e-9
    # z uniform on [-1, 1]: mean 0, var 1/3; fov uniform on [30, 120]
    assert abs(np.mean(zs)) < 3 * math.sqrt(1 / 3 / 100_000) * 1.5
    assert np.var(zs) == pytest.approx(1 / 3, abs=0.01)
    assert np.min(fovs) >= 30.0 and np.max(fovs) <= 120.0
    assert np.mean(fovs) == pytest.approx(75.0, abs=1.0)


def test_sample_symmetry_prior_clamped():
    from spheregen.objectives import SymmetryPrior
    gen = torch.Generator().manual_seed(0)
    s = sample_symmetry_prior(10_000, SymmetryPrior(0.5, 0.33), 5, gen)
    assert torch.all(s >= 0) and torch.all(s <= 1)
    assert s.mean().item() == pytest.approx(0.5, abs=0.01)
    assert torch.any(s == 0.0) and torch.any(s == 1.0)  # clamping engaged


def test_mask_center_recovers_view_direction(corpus_dir):
    cfg = tiny_train_cfg()
    trainer = Trainer(tiny_model_cfg(cfg), cfg)
    batch = _batch(corpus_dir, trainer, seed=3, n=4)
    for k in range(4):
        c = mask_center(batch.mask[k])
        assert c is not None
        cos = float(torch.dot(c, batch.centers[k]))
        assert cos > 0.95
    assert mask_center(torch.zeros(1, 32, 64)) is None


def test_checkpoint_roundtrip(tmp_path, corpus_dir):
    cfg = tiny_train_cfg()
    trainer = Trainer(tiny_model_cfg(cfg), cfg)
    trainer.train_step(_batch(corpus_dir, trainer))
    path = tmp_path / "ckpt.pt"
    trainer.save(path, extra={"note": "test"})
    state = load_checkpoint(path, with_disc=True, with_opt=True)
    assert state["payload"]["step"] == 1
    assert state["payload"]["extra"]["note"] == "test"
    for a, b in zip(trainer.model.state_dict().values(),
                    state["model"].state_dict().values()):
        assert torch.equal(a, b)
    for a, b in zip(trainer.disc.state_dict().values(),
                    state["disc"].state_dict().values()):
        assert torch.equal(a, b)
    assert state["opt_g_state"] is not None


def test_checkpoint_registry_mismatch(tmp_path):
    cfg = tiny_train_cfg()
    trainer = Trainer(tiny_model_cfg(cfg), cfg)
    path = tmp_path / "ckpt.pt"
    save_checkpoint(path, trainer.model, None, trainer.model_cfg)
    payload = torch.load(path, weights_only=False)
    payload["registry"] = ["rot45"]
    torch.save(payload, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_corrupt_and_wrong_version(tmp_path):
    bad = tmp_path / "bad.pt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    versioned = tmp_path / "old.pt"
    torch.save({"version": -1}, versioned)
    with pytest.raises(CheckpointError):
        load_checkpoint(versioned)


def test_generate_deterministic_and_validated(corpus_dir):
    cfg = tiny_train_cfg()
    trainer = Trainer(tiny_model_cfg(cfg), cfg)
    batch = _batch(corpus_dir, trainer)
    s = [0.2, 0.4, 0.6, 0.8, 1.0]
    a = generate(trainer.model, batch.x_l[0], s, seed=5, mask=batch.mask[0])
    b = generate(trainer.model, batch.x_l[0], s, seed=5, mask=batch.mask[0])
    assert torch.equal(a, b)
    assert a.shape == (3, 32, 64)
    c = generate(trainer.model, batch.x_l[0], s, seed=6, mask=batch.mask[0])
    assert not torch.equal(a, c)
    with pytest.raises(GeometryError):
        generate(trainer.model, batch.x_l[0], [1.2, 0, 0, 0, 0])
    with pytest.raises(GeometryError):
        generate(trainer.model, batch.x_l[0], [0.5, 0.5])


def test_train_loop_and_resume(tmp_path, corpus_dir):
    cfg = tiny_train_cfg(steps=2)
    model_cfg = tiny_model_cfg(cfg)
    ckpt = train(corpus_dir, model_cfg, cfg, tmp_path / "run", quiet=True)
    assert ckpt.exists()
    state = load_checkpoint(ckpt)
    assert state["payload"]["step"] == 2
    log = (tmp_path / "run" / "metrics.jsonl").read_text().strip().splitlines()
    assert len(log) >= 3  # header plus per-step lines
    ckpt2 = train(corpus_dir, model_cfg, cfg, tmp_path / "run2", quiet=True,
                  resume=ckpt)
    assert load_checkpoint(ckpt2)["payload"]["step"] == 4


def test_loaded_model_reproduces_outputs(tmp_path, corpus_dir):
    cfg = tiny_train_cfg()
    trainer = Trainer(tiny_model_cfg(cfg), cfg)
    trainer.train_step(_batch(corpus_dir, trainer))
    path = tmp_path / "m.pt"
    trainer.save(path)
    restored: Generator = load_checkpoint(path)["model"]
    batch = _batch(corpus_dir, trainer, seed=9)
    s = [0.0, 0.0, 0.0, 0.0, 0.0]
    a = generate(trainer.model, batch.x_l[0], s, seed=1, mask=batch.mask[0])
    b = generate(restored, batch.x_l[0], s, seed=1, mask=batch.mask[0])
    assert torch.equal(a, b)
