"""Procedural synthetic panorama corpus with controllable ground-truth
symmetry, plus PNG/manifest I/O.

Symmetric scenes are built by rendering one fundamental domain and
replicating it with exact column permutations, so the labeled invariance
holds bit-for-bit (and survives 8-bit PNG quantization).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .geometry import circular_shift

LABELS = ("rot90", "rot180", "rot270", "plane0", "plane90", "asym")

SPLIT_FRACTIONS = {"train": 50 / 65, "val": 10 / 65, "test": 5 / 65}


@dataclass(frozen=True)
class SceneRecipe:
    label: str
    seed: int
    height: int = 64
    n_blobs: int = 6
    n_stripes: int = 3
    horizon: float = 0.62  # fraction of image height

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(f"unknown label {self.label!r}")

    @property
    def width(self) -> int:
        return 2 * self.height


def _render_raw(r: SceneRecipe) -> torch.Tensor:
    """Asymmetric base scene: sky gradient, ground band, blobs, stripes."""
    rng = np.random.default_rng(r.seed)
    h, w = r.height, r.width
    rows = np.linspace(0.0, 1.0, h)[:, None, None]  # [H,1,1]
    sky_top = rng.uniform(0.4, 0.9, size=3)
    sky_mid = rng.uniform(0.3, 0.8, size=3)
    ground = rng.uniform(0.1, 0.5, size=3)
    img = sky_top[None, None, :] * (1 - rows) + sky_mid[None, None, :] * rows
    img = np.broadcast_to(img, (h, w, 3)).copy()
    horizon_row = r.horizon
    soft = 1.0 / (1.0 + np.exp(-(rows[:, :, 0] - horizon_row) * 40.0))  # [H,1]
    img = img * (1 - soft[:, :, None]) + ground[None, None, :] * soft[:, :, None]

    theta = (np.arange(w) + 0.5) / w * 2 * math.pi  # [W]
    phi = (np.arange(h) + 0.5) / h * math.pi  # [H]
    for _ in range(r.n_blobs):
        t0 = rng.uniform(0, 2 * math.pi)
        p0 = rng.uniform(0.25 * math.pi, 0.8 * math.pi)
        st = rng.uniform(0.15, 0.6)
        sp = rng.uniform(0.1, 0.4)
        color = rng.uniform(0.0, 1.0, size=3)
        amp = rng.uniform(0.4, 0.9)
        dt = np.angle(np.exp(1j * (theta - t0)))  # wrapped longitude distance
        bump = np.exp(-(dt[None, :] ** 2) / (2 * st**2) - ((phi[:, None] - p0) ** 2) / (2 * sp**2))
        img = img * (1 - amp * bump[:, :, None]) + amp * bump[:, :, None] * color[None, None, :]
    for _ in range(r.n_stripes):
        t0 = rng.uniform(0, 2 * math.pi)
        st = rng.uniform(0.04, 0.15)
        color = rng.uniform(0.0, 1.0, size=3)
        amp = rng.uniform(0.2, 0.6)
        dt = np.angle(np.exp(1j * (theta - t0)))
        stripe = np.exp(-(dt**2) / (2 * st**2))
        img = img * (1 - amp * stripe[None, :, None]) + amp * stripe[None, :, None] * color[None, None, :]
    img = np.clip(img, 0.0, 1.0)
    return torch.from_numpy(img.transpose(2, 0, 1)).to(torch.float32)  # [3,H,W]


def _tile(img: torch.Tensor, copies: int) -> torch.Tensor:
    w = img.shape[-1]
    block = img[..., : w // copies]
    return torch.cat([block] * copies, dim=-1)


def _mirror(img: torch.Tensor) -> torch.Tensor:
    w = img.shape[-1]
    left = img[..., : w // 2]
    return torch.cat([left, torch.flip(left, dims=[-1])], dim=-1)


def render_scene(r: SceneRecipe) -> torch.Tensor:
    """Render a [3, H, 2H] panorama in [0, 1] satisfying the labeled
    symmetry exactly."""
    img = _render_raw(r)
    if r.label in ("rot90", "rot270"):
        return _tile(img, 4)
    if r.label == "rot180":
        return _tile(img, 2)
    if r.label == "plane0":
        return _mirror(img)
    if r.label == "plane90":
        return circular_shift(_mirror(img), 90.0)
    return img


def save_image(img: torch.Tensor, path: Path | str):
    arr = (img.clamp(0, 1).numpy().transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
    if arr.shape[-1] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path)


def load_image(path: Path | str) -> torch.Tensor:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr.transpose(2, 0, 1))


def save_mask(mask: torch.Tensor, path: Path | str):
    arr = (mask.clamp(0, 1).numpy() * 255.0).round().astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def build_corpus(
    out_dir: Path | str,
    n: int,
    seed: int = 0,
    height: int = 64,
    mix: dict[str, float] | None = None,
    force: bool = False,
) -> Path:
    """Render n panoramas into out_dir/images plus a JSON-lines manifest.

    Labels follow `mix` (default uniform over the six labels); splits mirror
    the 50k/10k/5k train/test/val proportions.
    """
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} exists and is not empty (use force)")
    (out / "images").mkdir(parents=True, exist_ok=True)
    if mix is None:
        mix = {lab: 1.0 for lab in LABELS}
    bad = set(mix) - set(LABELS)
    if bad or not mix or any(v < 0 for v in mix.values()) or sum(mix.values()) <= 0:
        raise ValueError(f"invalid label mix {mix}")
    labels = list(mix)
    probs = np.array([mix[k] for k in labels], dtype=np.float64)
    probs /= probs.sum()
    # Deterministic label counts: largest-remainder apportionment.
    counts = np.floor(probs * n).astype(int)
    rem = n - counts.sum()
    order = np.argsort(-(probs * n - counts))
    for idx in order[:rem]:
        counts[idx] += 1
    label_seq = [lab for lab, c in zip(labels, counts) for _ in range(int(c))]
    rng = np.random.default_rng(seed)
    rng.shuffle(label_seq)

    n_train = int(round(n * SPLIT_FRACTIONS["train"]))
    n_val = int(round(n * SPLIT_FRACTIONS["val"]))
    records = []
    for idx, label in enumerate(label_seq):
        recipe = SceneRecipe(
            label=label,
            seed=int(rng.integers(0, 2**31 - 1)),
            height=height,
            n_blobs=int(rng.integers(4, 9)),
            n_stripes=int(rng.integers(2, 5)),
            horizon=float(rng.uniform(0.55, 0.72)),
        )
        img = render_scene(recipe)
        name = f"{idx:05d}.png"
        save_image(img, out / "images" / name)
        split = "train" if idx < n_train else ("val" if idx < n_train + n_val else "test")
        records.append({"file": f"images/{name}", "split": split, **asdict(recipe)})
    with open(out / "manifest.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return out


def load_manifest(corpus_dir: Path | str) -> list[dict]:
    path = Path(corpus_dir) / "manifest.jsonl"
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


class Corpus:
    """Thin accessor over a rendered corpus directory."""

    def __init__(self, corpus_dir: Path | str, split: str | None = None):
        self.dir = Path(corpus_dir)
        records = load_manifest(self.dir)
        self.records = [r for r in records if split is None or r["split"] == split]
        if not self.records:
            raise ValueError(f"no records for split {split!r} in {self.dir}")

    def __len__(self):
        return len(self.records)

    def image(self, idx: int) -> torch.Tensor:
        return load_image(self.dir / self.records[idx]["file"])

    def label(self, idx: int) -> str:
        return self.records[idx]["label"]
