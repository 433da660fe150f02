"""Dual-path training loop (reconstruction + generation), sampling entry
point, random view generation, and checkpointing.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch

from .data import Corpus
from .geometry import GeometryError, ViewSpec, grid_directions, EquirectGrid, nfov_to_equirect
from .networks import Discriminator, Generator, ModelConfig, desk_config, full_config, set_circular_padding
from .objectives import (
    ObjectiveError,
    ObjectiveWeights,
    SymmetryPrior,
    check_finite,
    combined_objective,
    discriminator_loss,
    gaussian_kl,
    gen_likelihood,
    rec_likelihood,
    reparameterize,
    symmetry_logprior,
)

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    steps: int = 1000
    seed: int = 0
    loss_mode: str = "both"  # both | rec | gen
    symmetry_control: bool = True
    weight_w: bool = True
    circular_padding: bool = True
    preset: str = "desk"  # desk | full
    adam_betas: tuple[float, float] = (0.5, 0.999)
    fill: float = 0.5
    log_every: int = 10
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.loss_mode not in ("both", "rec", "gen"):
            raise ValueError(f"unknown loss mode {self.loss_mode!r}")
        if self.preset not in ("desk", "full"):
            raise ValueError(f"unknown preset {self.preset!r}")


def model_config_for(train_cfg: TrainConfig, **overrides) -> ModelConfig:
    cfg = full_config() if train_cfg.preset == "full" else desk_config()
    cfg.use_symmetry_control = train_cfg.symmetry_control
    cfg.use_weight = train_cfg.weight_w
    cfg.use_circular_padding = train_cfg.circular_padding
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg.validate()


def random_view(rng: np.random.Generator, fov_range=(30.0, 120.0)) -> ViewSpec:
    """Uniform view center on the sphere, uniform FOV, square aspect."""
    z = rng.uniform(-1.0, 1.0)
    theta = rng.uniform(0.0, 2.0 * math.pi)
    r = math.sqrt(max(0.0, 1.0 - z * z))
    center = (r * math.cos(theta), r * math.sin(theta), z)
    fov = rng.uniform(*fov_range)
    return ViewSpec(center=center, fov_deg=fov, fov_range=fov_range)


@dataclass
class TrainBatch:
    x_g: torch.Tensor  # [B, 3, H, W]
    x_l: torch.Tensor  # [B, 3, H, W]
    mask: torch.Tensor  # [B, 1, H, W]
    centers: torch.Tensor  # [B, 3]


def make_batch(corpus: Corpus, indices, rng: np.random.Generator, fill: float,
               fov_range=(30.0, 120.0)) -> TrainBatch:
    xs, xl, masks, centers = [], [], [], []
    for idx in indices:
        x_g = corpus.image(int(idx))
        view = random_view(rng, fov_range)
        partial, mask = nfov_to_equirect(x_g, view, fill=fill)
        xs.append(x_g)
        xl.append(partial)
        masks.append(mask[None])
        centers.append(torch.tensor(view.center, dtype=torch.float32))
    return TrainBatch(torch.stack(xs), torch.stack(xl), torch.stack(masks), torch.stack(centers))


def sample_symmetry_prior(batch: int, prior: SymmetryPrior, n_types: int,
                          gen: torch.Generator) -> torch.Tensor:
    s = prior.mu + prior.sigma * torch.randn(batch, n_types, generator=gen)
    return s.clamp(0.0, 1.0)


class Trainer:
    def __init__(self, model_cfg: ModelConfig, train_cfg: TrainConfig, device="cpu"):
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.device = device
        torch.manual_seed(train_cfg.seed)
        self.model = Generator(model_cfg).to(device)
        self.disc = Discriminator(model_cfg).to(device)
        set_circular_padding(self.model, model_cfg.use_circular_padding)
        set_circular_padding(self.disc, model_cfg.use_circular_padding)
        self.opt_g = torch.optim.Adam(self.model.parameters(), lr=train_cfg.lr,
                                      betas=train_cfg.adam_betas)
        self.opt_d = torch.optim.Adam(self.disc.parameters(), lr=train_cfg.lr,
                                      betas=train_cfg.adam_betas)
        self.weights = ObjectiveWeights(model_cfg.alpha, model_cfg.beta, model_cfg.gamma)
        self.prior = SymmetryPrior(model_cfg.mu_s, model_cfg.sigma_s)
        self.torch_gen = torch.Generator().manual_seed(train_cfg.seed)
        self.step_count = 0

    def train_step(self, batch: TrainBatch) -> dict:
        cfg = self.train_cfg
        model, disc = self.model, self.disc
        b = batch.x_g.shape[0]
        w_full = model.weight_maps(batch.centers)

        # --- generator-side objective ---
        f_e, f_l, mu_p, sigma_p = model.encode_partial(batch.x_l)
        metrics = {"step": self.step_count}
        l_rec = torch.zeros((), dtype=batch.x_g.dtype)
        l_gen = torch.zeros((), dtype=batch.x_g.dtype)
        x_hat = x_tilde = None

        if cfg.loss_mode in ("both", "rec"):
            if self.model_cfg.use_symmetry_control:
                mu_q, sigma_q, s_est = model.encode_full(batch.x_g)
            else:
                _, fl_g = model.encoder(batch.x_g)
                mu_q, sigma_q = model.posterior(fl_g)
                s_est = None
            eps = torch.randn(mu_q.shape, generator=self.torch_gen, dtype=mu_q.dtype)
            z = reparameterize(mu_q, sigma_q, eps)
            x_hat = model.decode(f_e, f_l, z, s_est, w_full)
            d_real = disc(batch.x_g)
            d_fake = disc(x_hat)
            kl_z = gaussian_kl(mu_q, sigma_q, mu_p, sigma_p) / b
            like = rec_likelihood(batch.x_g, x_hat, d_real, d_fake, self.weights)
            l_rec = -kl_z + like
            metrics.update(kl_z=kl_z.item(), rec_like=like.item())
            if s_est is not None:
                logp_s = symmetry_logprior(s_est, self.prior) / b
                l_rec = l_rec + logp_s
                metrics.update(logp_s=logp_s.item(), s_mean=s_est.mean().item())

        if cfg.loss_mode in ("both", "gen"):
            eps = torch.randn(mu_p.shape, generator=self.torch_gen, dtype=mu_p.dtype)
            z_tilde = reparameterize(mu_p, sigma_p, eps)
            s_tilde = sample_symmetry_prior(b, self.prior, self.model_cfg.symmetry_types,
                                            self.torch_gen)
            x_tilde = model.decode(f_e, f_l, z_tilde, s_tilde, w_full)
            d_fake_t = disc(x_tilde)
            l_gen = gen_likelihood(batch.x_l, batch.mask, x_tilde, d_fake_t, self.weights)

        if cfg.loss_mode == "both":
            objective = combined_objective(l_rec, l_gen, self.weights.gamma)
        elif cfg.loss_mode == "rec":
            objective = l_rec
        else:
            objective = l_gen
        check_finite("generator objective", objective)

        self.opt_g.zero_grad(set_to_none=True)
        self.opt_d.zero_grad(set_to_none=True)
        (-objective).backward()
        self.opt_g.step()

        # --- discriminator step ---
        d_real = disc(batch.x_g)
        fake_losses = []
        for fake in (x_hat, x_tilde):
            if fake is not None:
                fake_losses.append(discriminator_loss(d_real, disc(fake.detach())))
        l_d = torch.stack(fake_losses).mean()
        check_finite("discriminator loss", l_d)
        self.opt_d.zero_grad(set_to_none=True)
        self.opt_g.zero_grad(set_to_none=True)
        l_d.backward()
        self.opt_d.step()

        self.step_count += 1
        metrics.update(
            step=self.step_count,
            loss_rec=l_rec.detach().item(),
            loss_gen=l_gen.detach().item(),
            loss_d=l_d.detach().item(),
            objective=objective.detach().item(),
        )
        if x_hat is not None:
            masked_l1 = ((batch.x_g - x_hat).abs() * batch.mask).sum() / batch.mask.sum().clamp(min=1) / 3
            metrics["rec_masked_l1"] = masked_l1.detach().item()
        return metrics

    def save(self, path: Path | str, extra: dict | None = None):
        save_checkpoint(path, self.model, self.disc, self.model_cfg,
                        opt_g=self.opt_g, opt_d=self.opt_d,
                        step=self.step_count, seed=self.train_cfg.seed, extra=extra)


def train(corpus_dir, model_cfg: ModelConfig, train_cfg: TrainConfig,
          workdir, log_name="metrics.jsonl", quiet=False, resume=None) -> Path:
    """Run the loop over the corpus train split; returns the checkpoint path."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    corpus = Corpus(corpus_dir, split="train")
    trainer = Trainer(model_cfg, train_cfg)
    if resume is not None:
        state = load_checkpoint(resume, with_disc=True, with_opt=True)
        trainer.model.load_state_dict(state["model"].state_dict())
        if state["disc"] is not None:
            trainer.disc.load_state_dict(state["disc"].state_dict())
        if state["opt_g_state"] is not None:
            trainer.opt_g.load_state_dict(state["opt_g_state"])
        if state["opt_d_state"] is not None:
            trainer.opt_d.load_state_dict(state["opt_d_state"])
        trainer.step_count = state["payload"]["step"]
    rng = np.random.default_rng(train_cfg.seed)
    ckpt_path = workdir / "checkpoint.pt"
    t0 = time.time()
    with open(workdir / log_name, "w") as log:
        log.write(json.dumps({"header": True, "train_cfg": asdict(train_cfg),
                              "model_cfg": model_cfg.to_dict()}) + "\n")
        for step in range(train_cfg.steps):
            indices = rng.integers(0, len(corpus), size=train_cfg.batch_size)
            batch = make_batch(corpus, indices, rng, train_cfg.fill,
                               (model_cfg.fov_min, model_cfg.fov_max))
            metrics = trainer.train_step(batch)
            if (step + 1) % train_cfg.log_every == 0 or step == 0:
                metrics["elapsed_s"] = round(time.time() - t0, 2)
                log.write(json.dumps(metrics) + "\n")
                log.flush()
                if not quiet:
                    print(f"step {metrics['step']}: L_rec={metrics['loss_rec']:.1f} "
                          f"L_gen={metrics['loss_gen']:.1f} L_D={metrics['loss_d']:.3f}")
            if (step + 1) % train_cfg.checkpoint_every == 0:
                trainer.save(ckpt_path)
    trainer.save(ckpt_path)
    return ckpt_path


def mask_center(mask: torch.Tensor) -> torch.Tensor | None:
    """Mean direction of masked pixels (the view center of a partial image)."""
    if mask.dim() == 3:
        mask = mask[0]
    h, w = mask.shape
    d = grid_directions(EquirectGrid(h, w), dtype=torch.float32)
    total = mask.sum()
    if total <= 0:
        return None
    c = (d * mask[..., None]).sum(dim=(0, 1)) / total
    n = torch.linalg.norm(c)
    if n < 1e-8:
        return None
    return c / n


@torch.no_grad()
def generate(model: Generator, x_l: torch.Tensor, s, seed: int = 0,
             mask: torch.Tensor | None = None) -> torch.Tensor:
    """Sample z from the conditional prior and decode with the requested
    symmetry intensities. Returns a [3, H, W] image in [0, 1]."""
    s = torch.as_tensor(s, dtype=torch.float32).reshape(-1)
    if s.numel() != model.cfg.symmetry_types or torch.any(s < 0) or torch.any(s > 1):
        raise GeometryError(f"s must lie in [0,1]^{model.cfg.symmetry_types}")
    model.eval()
    x = x_l[None] if x_l.dim() == 3 else x_l
    f_e, f_l, mu, sigma = model.encode_partial(x)
    gen = torch.Generator().manual_seed(seed)
    eps = torch.randn(mu.shape, generator=gen, dtype=mu.dtype)
    z = reparameterize(mu, sigma, eps)
    centers = None
    if mask is not None:
        c = mask_center(mask)
        if c is not None:
            centers = c[None]
    w_full = model.weight_maps(centers)
    out = model.decode(f_e, f_l, z, s[None], w_full)
    model.train()
    return out[0]


def save_checkpoint(path, model: Generator, disc: Discriminator | None,
                    model_cfg: ModelConfig, opt_g=None, opt_d=None,
                    step=0, seed=0, extra=None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_cfg": model_cfg.to_dict(),
        "registry": [t.name for t in model.registry],
        "model_state": model.state_dict(),
        "disc_state": disc.state_dict() if disc is not None else None,
        "opt_g_state": opt_g.state_dict() if opt_g is not None else None,
        "opt_d_state": opt_d.state_dict() if opt_d is not None else None,
        "step": step,
        "seed": seed,
        "extra": extra or {},
    }
    torch.save(payload, path)


class CheckpointError(RuntimeError):
    pass


def load_checkpoint(path, with_disc=True, with_opt=False):
    """Restore (model, disc, payload); raises CheckpointError on version or
    registry mismatch or a corrupt file."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version in {path}")
    cfg = ModelConfig.from_dict(payload["model_cfg"])
    model = Generator(cfg)
    expected = [t.name for t in model.registry]
    if payload.get("registry") != expected:
        raise CheckpointError(f"registry mismatch: {payload.get('registry')} != {expected}")
    model.load_state_dict(payload["model_state"])
    set_circular_padding(model, cfg.use_circular_padding)
    disc = None
    if with_disc and payload.get("disc_state") is not None:
        disc = Discriminator(cfg)
        disc.load_state_dict(payload["disc_state"])
        set_circular_padding(disc, cfg.use_circular_padding)
    result = {"model": model, "disc": disc, "payload": payload, "config": cfg}
    if with_opt:
        result["opt_g_state"] = payload.get("opt_g_state")
        result["opt_d_state"] = payload.get("opt_d_state")
    return result
