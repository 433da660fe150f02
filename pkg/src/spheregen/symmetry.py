"""Differentiable symmetry estimation and the symmetry-control blend.

Symmetry intensities s live in [0, 1]^5 in the fixed registry order
[rot90, rot180, rot270, plane0, plane90].
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .geometry import (
    GeometryError,
    SymmetryType,
    symmetry_transform,
    transforms_compatible,
)


def estimate_symmetry(
    f_s: torch.Tensor,
    zeta: torch.Tensor,
    eta: torch.Tensor,
    registry: list[SymmetryType],
) -> torch.Tensor:
    """s_i = sigmoid(zeta * ||T_i(f_s) - f_s||_1 + eta).

    f_s is [C, H, W] or [B, C, H, W]; returns [len(registry)] or
    [B, len(registry)]. The L1 norm is the sum of absolute differences.
    """
    batched = f_s.dim() == 4
    if not batched:
        f_s = f_s[None]
    if not transforms_compatible(f_s.shape[-1], registry):
        raise GeometryError(
            f"feature width {f_s.shape[-1]} incompatible with registry transforms"
        )
    terms = []
    for t in registry:
        diff = (symmetry_transform(f_s, t) - f_s).abs().sum(dim=(1, 2, 3))
        terms.append(torch.sigmoid(zeta * diff + eta))
    s = torch.stack(terms, dim=-1)
    return s if batched else s[0]


def symmetry_control(
    f: torch.Tensor,
    s: torch.Tensor,
    w: torch.Tensor,
    registry: list[SymmetryType],
) -> torch.Tensor:
    """Blend a feature map with its symmetry transforms:

        H(f, s) = (w*f + sum_i s_i T_i(w*f)) / (w + sum_i s_i T_i(w))

    f: [B, C, H, W]; s: [B, len(registry)]; w: [H, W] or [B, 1, H, W],
    strictly positive; the denominator is shared across channels.
    """
    if torch.any(w <= 0):
        raise GeometryError("weight map must be strictly positive")
    if w.dim() == 2:
        w = w[None, None]
    elif w.dim() == 3:
        w = w[:, None]
    w = w.to(f.dtype)
    wf = w * f
    num = wf.clone()
    den = w.expand(f.shape[0], 1, *w.shape[-2:]).clone()
    for i, t in enumerate(registry):
        si = s[:, i].view(-1, 1, 1, 1)
        num = num + si * symmetry_transform(wf, t)
        den = den + si * symmetry_transform(w.expand_as(den), t)
    return num / den


def resample_weight(w: torch.Tensor, h: int, wdt: int) -> torch.Tensor:
    """Area-average a full-resolution weight map down to a feature grid."""
    if w.dim() == 2:
        w = w[None, None]
        return F.adaptive_avg_pool2d(w, (h, wdt))[0, 0]
    return F.adaptive_avg_pool2d(w, (h, wdt))


def init_estimator_params(numel_fs: int) -> tuple[float, float]:
    """(zeta, eta) start values: scale-free so initial s_i is near 0.5."""
    return -1.0 / float(numel_fs), 0.0
