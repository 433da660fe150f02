"""Evaluation: the symmetry metric (SEM), Frechet distance on pooled
features, a seam-discontinuity metric, and the symmetry-sweep harness.

The feature extractor is a frozen, seed-initialized convolutional net
(stand-in for a pretrained backbone; a different extractor can be passed
anywhere one is accepted). Its convolutions use circular padding so the
features are shift-equivariant, which SEM relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy import linalg

from .geometry import GeometryError, SymmetryType, default_registry, symmetry_transform, transforms_compatible
from .networks import CircularPadConv


class FeatureExtractor(torch.nn.Module):
    """Frozen random conv features: three circular-padded conv layers with
    2x average pooling between them, so the feature grid is H/4 x W/4."""

    def __init__(self, seed: int = 0, channels: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        in_ch = 3
        for ch in channels:
            conv = CircularPadConv(in_ch, ch)
            torch.nn.init.orthogonal_(conv.conv.weight, generator=gen)
            torch.nn.init.zeros_(conv.conv.bias)
            layers.append(conv)
            in_ch = ch
        self.convs = torch.nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    @torch.no_grad()
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 3:
            x = x[None]
        h = x
        for i, conv in enumerate(self.convs):
            h = F.leaky_relu(conv(h), 0.2)
            if i < len(self.convs) - 1:
                h = F.avg_pool2d(h, 2)
        return h

    @torch.no_grad()
    def pooled(self, x: torch.Tensor) -> torch.Tensor:
        """Spatially averaged feature vectors [B, C] for Frechet distance."""
        return self.forward(x).mean(dim=(2, 3))


def sem_features(feat: torch.Tensor, t: SymmetryType) -> float:
    """Normalized correlation between a feature map and its transform.

    Every transform in the registry permutes columns only, so the per-row
    mean (horizontally constant content, e.g. sky/ground gradients) is
    invariant under the whole group and carries no symmetry information;
    it is removed before correlating, otherwise it inflates the score
    toward 1 for any input."""
    if not transforms_compatible(feat.shape[-1], [t]):
        raise GeometryError(f"feature width {feat.shape[-1]} incompatible with {t.name}")
    centered = feat - feat.mean(dim=-1, keepdim=True)
    a = centered.reshape(-1)
    b = symmetry_transform(centered, t).reshape(-1)
    denom = torch.linalg.norm(a) * torch.linalg.norm(b)
    if denom == 0:
        # horizontally constant features are symmetric under every transform
        return 1.0
    return float(torch.dot(a, b) / denom)


def sem(x: torch.Tensor, t: SymmetryType, fe: FeatureExtractor) -> float:
    """Symmetry-evaluation metric for one image and one symmetry type."""
    return sem_features(fe(x)[0], t)


def sem_rotational(x: torch.Tensor, fe: FeatureExtractor) -> float:
    """Composite metric for multiple-of-90-degree rotational symmetry:
    the mean SEM over the 90/180/270 rotations."""
    feat = fe(x)[0]
    rots = [t for t in default_registry() if t.kind == "rotation"]
    return float(np.mean([sem_features(feat, t) for t in rots]))


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray, eps: float = 1e-6) -> float:
    """||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}) between Gaussian
    fits of two feature sets [N, D]."""
    feats_a = np.asarray(feats_a, dtype=np.float64)
    feats_b = np.asarray(feats_b, dtype=np.float64)
    if not (np.isfinite(feats_a).all() and np.isfinite(feats_b).all()):
        raise ValueError("non-finite features")
    mu_a, mu_b = feats_a.mean(axis=0), feats_b.mean(axis=0)
    dim = feats_a.shape[1]
    cov_a = np.cov(feats_a, rowvar=False).reshape(dim, dim) + eps * np.eye(dim)
    cov_b = np.cov(feats_b, rowvar=False).reshape(dim, dim) + eps * np.eye(dim)
    covmean = linalg.sqrtm(cov_a @ cov_b)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    d2 = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a + cov_b - 2.0 * covmean))
    return max(d2, 0.0)


def seam_discontinuity(x: torch.Tensor, eps: float = 1e-12) -> float:
    """Mean |column 0 - column W-1| normalized by the mean adjacent-column
    difference over the interior; ~1 for seamless content, >1 for a seam."""
    seam = (x[..., 0] - x[..., -1]).abs().mean()
    interior = (x[..., 1:] - x[..., :-1]).abs().mean()
    return float(seam / (interior + eps))


@dataclass
class SweepCell:
    target: str
    level: float
    median: float
    q1: float
    q3: float
    n: int


def symmetry_sweep(
    generate_fn,
    partials: list,
    fe: FeatureExtractor,
    targets: list[SymmetryType] | None = None,
    levels: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0),
    base_level: float = 0.3,
) -> list[SweepCell]:
    """For each target symmetry type and intensity level, generate from each
    held-out partial with s_target = level and the other intensities at
    `base_level`, and summarize the SEM distribution.

    `generate_fn(partial, s, sample_index) -> image` abstracts the model so
    the harness is testable with stub generators.
    """
    registry = default_registry()
    if targets is None:
        targets = registry
    cells = []
    for t in targets:
        ti = [r.name for r in registry].index(t.name)
        for level in levels:
            s = [base_level] * len(registry)
            s[ti] = level
            values = []
            for k, partial in enumerate(partials):
                img = generate_fn(partial, list(s), k)
                values.append(sem(img, t, fe))
            arr = np.asarray(values)
            cells.append(
                SweepCell(
                    target=t.name,
                    level=level,
                    median=float(np.median(arr)),
                    q1=float(np.percentile(arr, 25)),
                    q3=float(np.percentile(arr, 75)),
                    n=len(values),
                )
            )
    return cells


def sweep_to_rows(cells: list[SweepCell]) -> list[dict]:
    return [vars(c) for c in cells]
