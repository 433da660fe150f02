"""Network components: residual blocks with circular padding (RBCP),
the encoder and its distribution heads, the symmetry-controlled decoder,
self-attention, and the patch discriminator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import torch
import torch.nn as nn
import torch.nn.functional as F

from .geometry import EquirectGrid, GeometryError, default_registry, transforms_compatible, weight_map
from .symmetry import estimate_symmetry, init_estimator_params, resample_weight, symmetry_control


@dataclass
class ModelConfig:
    height: int = 64
    width: int = 128
    channels: int = 32
    symmetry_types: int = 5
    alpha: float = -1.0
    beta: float = -20.0
    gamma: float = 0.5
    kappa: float = 3.0
    mu_s: float = 0.50
    sigma_s: float = 0.33
    use_attention: bool = True
    use_symmetry_control: bool = True
    use_weight: bool = True
    use_circular_padding: bool = True
    patch_grid: int = 6
    fov_min: float = 30.0
    fov_max: float = 120.0

    # Encoder applies 5 downsampling blocks; f_e sits at /8, f_l at /32.
    @property
    def fe_shape(self) -> tuple[int, int, int]:
        return self.channels, self.height // 8, self.width // 8

    @property
    def fl_shape(self) -> tuple[int, int, int]:
        return self.channels, self.height // 32, self.width // 32

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return self.fl_shape

    @property
    def symmetry_head_downsamples(self) -> bool:
        # A down-mode head would put f_s on a grid too narrow for exact
        # 90-degree shifts at desk scale; fall back to standard mode there.
        return transforms_compatible(self.width // 64, default_registry())

    @property
    def fs_shape(self) -> tuple[int, int, int]:
        c, h, w = self.fl_shape
        return (c, h // 2, w // 2) if self.symmetry_head_downsamples else (c, h, w)

    def validate(self):
        if self.width != 2 * self.height:
            raise GeometryError("width must equal 2 * height")
        if self.height % 32 != 0:
            raise GeometryError("height must be divisible by 32 (five downsampling blocks)")
        if self.use_symmetry_control:
            reg = default_registry()
            for div in (1, 2, 4, 8, 16, 32):
                if not transforms_compatible(self.width // div, reg):
                    raise GeometryError(
                        f"width {self.width}//{div} incompatible with symmetry transforms")
            if not transforms_compatible(self.fs_shape[2], reg):
                raise GeometryError("symmetry-head grid incompatible with symmetry transforms")
        if not (0.0 <= self.gamma <= 1.0) or self.alpha > 0 or self.beta > 0:
            raise GeometryError("objective weights out of range")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def full_config() -> ModelConfig:
    """Full-scale configuration (documentation; not exercised in CI)."""
    return ModelConfig(height=256, width=512, channels=128).validate()


def desk_config() -> ModelConfig:
    """Scaled-down configuration for CPU experiments."""
    return ModelConfig(height=64, width=128, channels=32).validate()


class CircularPadConv(nn.Module):
    """Conv2d preceded by circular padding along longitude and zero padding
    along latitude. When `circular` is disabled (ablation), both axes are
    zero padded."""

    def __init__(self, in_ch, out_ch, kernel=3, stride=1, bias=True):
        super().__init__()
        self.pad = (kernel - 1) // 2
        self.circular = True
        self.conv = nn.Conv2d(in_ch, out_ch, kernel, stride=stride, padding=0, bias=bias)

    def forward(self, x):
        if self.pad > 0:
            mode = "circular" if self.circular else "constant"
            x = F.pad(x, (self.pad, self.pad, 0, 0), mode=mode)
            x = F.pad(x, (0, 0, self.pad, self.pad))
        return self.conv(x)


def set_circular_padding(module: nn.Module, enabled: bool):
    for m in module.modules():
        if isinstance(m, CircularPadConv):
            m.circular = enabled


class RBCP(nn.Module):
    """Pre-activation residual block with circular padding.

    Modes: "standard" keeps the spatial size, "down" halves it with a
    stride-2 conv, "up" doubles it with nearest-neighbor upsampling.
    """

    def __init__(self, in_ch, out_ch, mode="standard"):
        super().__init__()
        if mode not in ("standard", "down", "up"):
            raise GeometryError(f"unknown RBCP mode {mode!r}")
        self.mode = mode
        stride = 2 if mode == "down" else 1
        self.norm1 = nn.InstanceNorm2d(in_ch, affine=True)
        self.conv1 = CircularPadConv(in_ch, out_ch, stride=stride)
        self.norm2 = nn.InstanceNorm2d(out_ch, affine=True)
        self.conv2 = CircularPadConv(out_ch, out_ch)
        if in_ch != out_ch or mode != "standard":
            self.shortcut = CircularPadConv(in_ch, out_ch, kernel=1, stride=stride)
        else:
            self.shortcut = None

    def forward(self, x):
        h = F.leaky_relu(self.norm1(x), 0.2)
        if self.mode == "up":
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        h = self.conv1(h)
        h = self.conv2(F.leaky_relu(self.norm2(h), 0.2))
        s = x if self.shortcut is None else self.shortcut(x)
        return h + s


class SelfAttention(nn.Module):
    """Dot-product self-attention over spatial positions with a learned
    residual gate (starts at 0, so the block is initially the identity)."""

    def __init__(self, channels):
        super().__init__()
        mid = max(channels // 8, 1)
        self.query = CircularPadConv(channels, mid, kernel=1)
        self.key = CircularPadConv(channels, mid, kernel=1)
        self.value = CircularPadConv(channels, channels, kernel=1)
        self.gate = nn.Parameter(torch.zeros(1))

    def forward(self, x):
        b, c, h, w = x.shape
        q = self.query(x).reshape(b, -1, h * w)
        k = self.key(x).reshape(b, -1, h * w)
        v = self.value(x).reshape(b, c, h * w)
        att = torch.softmax(torch.bmm(q.transpose(1, 2), k), dim=-1)
        out = torch.bmm(v, att.transpose(1, 2)).reshape(b, c, h, w)
        return x + self.gate * out


class Encoder(nn.Module):
    """Shared feature extractor F: two RBCP(s) followed by five RBCP(d).

    Returns (f_e, f_l): outputs of the fifth and seventh layers.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.channels
        self.blocks = nn.ModuleList([
            RBCP(3, w, "standard"),
            RBCP(w, w, "standard"),
            RBCP(w, w, "down"),
            RBCP(w, w, "down"),
            RBCP(w, w, "down"),
            RBCP(w, w, "down"),
            RBCP(w, w, "down"),
        ])
        self.expected_hw = (cfg.height, cfg.width)

    def forward(self, x):
        if tuple(x.shape[-2:]) != self.expected_hw:
            raise GeometryError(f"encoder expects {self.expected_hw}, got {tuple(x.shape[-2:])}")
        f_e = None
        h = x
        for i, blk in enumerate(self.blocks):
            h = blk(h)
            if i == 4:
                f_e = h
        return f_e, h


LOGVAR_RANGE = 10.0


class PosteriorHeads(nn.Module):
    """F_mu / F_Sigma: one RBCP(s) each on the encoder's last-layer features."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.channels
        self.mu_head = RBCP(w, w, "standard")
        self.logvar_head = RBCP(w, w, "standard")

    def forward(self, f_l):
        mu = self.mu_head(f_l)
        logvar = self.logvar_head(f_l).clamp(-LOGVAR_RANGE, LOGVAR_RANGE)
        return mu, torch.exp(0.5 * logvar)


class PriorHeads(nn.Module):
    """F~_mu / F~_Sigma: seven RBCP(s) sharing the first six layers."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.channels
        self.trunk = nn.Sequential(*[RBCP(w, w, "standard") for _ in range(6)])
        self.mu_head = RBCP(w, w, "standard")
        self.logvar_head = RBCP(w, w, "standard")

    def forward(self, f_l):
        h = self.trunk(f_l)
        mu = self.mu_head(h)
        logvar = self.logvar_head(h).clamp(-LOGVAR_RANGE, LOGVAR_RANGE)
        return mu, torch.exp(0.5 * logvar)


class SymmetryEstimator(nn.Module):
    """F_s head plus the two-parameter sigmoid readout of the transform
    residuals."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.channels
        mode = "down" if cfg.symmetry_head_downsamples else "standard"
        self.head = RBCP(w, w, mode)
        c, h, wd = cfg.fs_shape
        zeta0, eta0 = init_estimator_params(c * h * wd)
        self.zeta = nn.Parameter(torch.tensor(zeta0))
        self.eta = nn.Parameter(torch.tensor(eta0))
        self.registry = default_registry()

    def forward(self, f_l):
        f_s = self.head(f_l)
        return estimate_symmetry(f_s, self.zeta, self.eta, self.registry)


class Decoder(nn.Module):
    """G: one RBCP(s) and five RBCP(u), with the symmetry-control blend H
    applied to f_l + z at the input and to f_e at the matching resolution,
    and self-attention after the third layer."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.channels
        self.cfg = cfg
        self.registry = default_registry()
        self.block0 = RBCP(w, w, "standard")
        self.up1 = RBCP(w, w, "up")
        self.up2 = RBCP(w, w, "up")
        self.attention = SelfAttention(w) if cfg.use_attention else None
        self.up3 = RBCP(2 * w, w, "up")
        self.up4 = RBCP(w, w, "up")
        self.up5 = RBCP(w, w, "up")
        self.to_rgb = CircularPadConv(w, 3)

    def _control(self, f, s, w_full):
        if not self.cfg.use_symmetry_control or s is None:
            return f
        b, _, h, wd = f.shape
        if w_full is None:
            w_feat = torch.ones(h, wd, dtype=f.dtype, device=f.device)
        else:
            w_feat = resample_weight(w_full, h, wd)
        return symmetry_control(f, s, w_feat, self.registry)

    def forward(self, f_e, f_l, z, s, w_full=None):
        h = self._control(f_l + z, s, w_full)
        h = self.block0(h)
        h = self.up1(h)
        h = self.up2(h)
        if self.attention is not None:
            h = self.attention(h)
        fe_ctrl = self._control(f_e, s, w_full)
        h = self.up3(torch.cat([h, fe_ctrl], dim=1))
        h = self.up4(h)
        h = self.up5(h)
        return torch.sigmoid(self.to_rgb(h))


class Discriminator(nn.Module):
    """D: five RBCP(d), self-attention after the third, then a 3x3 conv to a
    single channel pooled to the patch confidence grid."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        w = cfg.channels
        self.expected_hw = (cfg.height, cfg.width)
        self.patch_grid = cfg.patch_grid
        self.blocks = nn.ModuleList([
            RBCP(3, w, "down"),
            RBCP(w, w, "down"),
            RBCP(w, w, "down"),
            RBCP(w, w, "down"),
            RBCP(w, w, "down"),
        ])
        self.attention = SelfAttention(w) if cfg.use_attention else None
        self.to_conf = CircularPadConv(w, 1)

    def forward(self, x):
        if tuple(x.shape[-2:]) != self.expected_hw:
            raise GeometryError(f"discriminator expects {self.expected_hw}, got {tuple(x.shape[-2:])}")
        h = x
        for i, blk in enumerate(self.blocks):
            h = blk(h)
            if i == 2 and self.attention is not None:
                h = self.attention(h)
        conf = self.to_conf(h)
        return F.adaptive_avg_pool2d(conf, (self.patch_grid, self.patch_grid))


class Generator(nn.Module):
    """All generator-side networks: encoder, distribution heads, symmetry
    estimator, and decoder."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.posterior = PosteriorHeads(cfg)
        self.prior = PriorHeads(cfg)
        self.symmetry = SymmetryEstimator(cfg)
        self.decoder = Decoder(cfg)
        self._grid = EquirectGrid(cfg.height, cfg.width)

    @property
    def registry(self):
        return self.symmetry.registry

    def weight_maps(self, centers: torch.Tensor | None) -> torch.Tensor | None:
        """Per-sample full-resolution concentration maps [B, 1, H, W]."""
        if not self.cfg.use_weight or not self.cfg.use_symmetry_control or centers is None:
            return None
        maps = [weight_map(self._grid, c, self.cfg.kappa) for c in centers]
        return torch.stack(maps)[:, None].to(next(self.parameters()).dtype)

    def encode_full(self, x_g):
        """Posterior and symmetry estimate from the full panorama."""
        _, f_l = self.encoder(x_g)
        mu, sigma = self.posterior(f_l)
        s = self.symmetry(f_l)
        return mu, sigma, s

    def encode_partial(self, x_l):
        """Prior parameters and decoder conditioning from the partial image."""
        f_e, f_l = self.encoder(x_l)
        mu, sigma = self.prior(f_l)
        return f_e, f_l, mu, sigma

    def decode(self, f_e, f_l, z, s, w_full=None):
        return self.decoder(f_e, f_l, z, s, w_full)


def parameter_table(module: nn.Module) -> list[tuple[str, tuple, int]]:
    """(name, shape, count) for every parameter; used by the snapshot test."""
    return [(n, tuple(p.shape), p.numel()) for n, p in module.named_parameters()]


def audit_circular_padding(module: nn.Module) -> list[str]:
    """Names of Conv2d layers NOT wrapped in CircularPadConv (must be empty)."""
    wrapped = set()
    for m in module.modules():
        if isinstance(m, CircularPadConv):
            wrapped.add(id(m.conv))
    bad = []
    for name, m in module.named_modules():
        if isinstance(m, nn.Conv2d) and id(m) not in wrapped:
            bad.append(name)
    return bad
