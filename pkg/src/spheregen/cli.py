"""Command-line interface: make-dataset | train | generate | evaluate |
crop-nfov.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
Option precedence: explicit flags > --config file > built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import torch
import yaml

from . import data as data_mod
from .geometry import GeometryError, ViewSpec, nfov_to_equirect
from .harness import evaluate_model, loss_ablation, padding_ablation
from .objectives import ObjectiveError
from .training import (
    CheckpointError,
    TrainConfig,
    generate,
    load_checkpoint,
    model_config_for,
    random_view,
    train,
)

S_PRESETS = {
    "90rot": (1.0, 1.0, 1.0, 0.3, 0.3),
    "180rot": (0.3, 1.0, 0.3, 0.3, 0.3),
    "plane0": (0.3, 0.3, 0.3, 1.0, 0.3),
    "plane90": (0.3, 0.3, 0.3, 0.3, 1.0),
    "asym": (0.3, 0.3, 0.3, 0.3, 0.3),
}

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _parse_mix(text):
    mix = {}
    for part in text.split(","):
        if not part.strip():
            continue
        key, _, val = part.partition("=")
        mix[key.strip()] = float(val) if val else 1.0
    return mix


def cmd_make_dataset(args):
    mix = _parse_mix(args.mix) if args.mix else None
    out = data_mod.build_corpus(args.out, args.n, seed=args.seed, height=args.height,
                                mix=mix, force=args.force)
    records = data_mod.load_manifest(out)
    counts = {}
    for rec in records:
        counts[rec["label"]] = counts.get(rec["label"], 0) + 1
    print(json.dumps({"dir": str(out), "n": len(records), "labels": counts}))
    return 0


def _load_config_file(path):
    if path is None:
        return {}
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise ValueError(f"config file {path} must contain a mapping")
    return cfg


def _merged_train_config(args, file_cfg) -> TrainConfig:
    values = dict(file_cfg.get("train", {}))
    flag_map = {
        "steps": args.steps, "batch_size": args.batch_size, "lr": args.lr,
        "seed": args.seed, "loss_mode": args.loss_mode, "preset": args.preset,
    }
    for key, val in flag_map.items():
        if val is not None:
            values[key] = val
    if args.no_symmetry_control:
        values["symmetry_control"] = False
    if args.no_weight:
        values["weight_w"] = False
    if args.no_circular_padding:
        values["circular_padding"] = False
    allowed = {f.name for f in fields(TrainConfig)}
    unknown = set(values) - allowed
    if unknown:
        raise ValueError(f"unknown train config keys: {sorted(unknown)}")
    return TrainConfig(**values)


def cmd_train(args):
    file_cfg = _load_config_file(args.config)
    tcfg = _merged_train_config(args, file_cfg)
    mcfg = model_config_for(tcfg, **file_cfg.get("model", {}))
    ckpt = train(args.corpus, mcfg, tcfg, args.workdir, resume=args.resume)
    print(json.dumps({"checkpoint": str(ckpt), "steps": tcfg.steps}))
    return 0


def _parse_s(args):
    if args.s_preset:
        return list(S_PRESETS[args.s_preset])
    if args.s is None:
        raise GeometryError("provide --s or --s-preset")
    vals = [float(v) for v in args.s.split(",")]
    if len(vals) != 5 or any(v < 0 or v > 1 for v in vals):
        raise GeometryError("--s must be five values in [0,1]")
    return vals


def cmd_generate(args):
    s = _parse_s(args)
    state = load_checkpoint(args.checkpoint, with_disc=False)
    model = state["model"]
    cfg = state["config"]
    x_l = data_mod.load_image(args.input)
    if x_l.shape[-2:] != (cfg.height, cfg.width):
        raise GeometryError(
            f"input is {tuple(x_l.shape[-2:])}, model expects {(cfg.height, cfg.width)}")
    mask = None
    if args.mask:
        mask = data_mod.load_image(args.mask)[0]
        mask = (mask > 0.5).to(torch.float32)
    img = generate(model, x_l, s, seed=args.seed, mask=mask)
    data_mod.save_image(img, args.out)
    print(json.dumps({"out": str(args.out), "s": s, "seed": args.seed}))
    return 0


def cmd_evaluate(args):
    if args.ablation == "loss":
        file_cfg = _load_config_file(args.config)
        train_overrides = dict(file_cfg.get("train", {}))
        for key in ("steps", "loss_mode", "seed"):
            train_overrides.pop(key, None)
        report = loss_ablation(args.corpus, args.out, steps=args.ablation_steps,
                               seed=args.seed, n_gen=args.n_gen,
                               model_overrides=file_cfg.get("model", {}),
                               train_overrides=train_overrides)
    elif args.ablation == "padding":
        report = padding_ablation(args.checkpoint, args.corpus,
                                  n_gen=args.n_gen, seed=args.seed)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        with open(Path(args.out) / "padding_ablation.json", "w") as fh:
            json.dump(report, fh, indent=2)
    else:
        if args.checkpoint is None:
            raise GeometryError("evaluate requires --checkpoint")
        report = evaluate_model(args.checkpoint, args.corpus, args.out,
                                n_gen=args.n_gen, seed=args.seed,
                                montage=args.montage)
    print(json.dumps({k: v for k, v in report.items()
                      if k in ("fid", "seam", "results", "seam_circular",
                               "seam_zero_pad", "columns")}, indent=2))
    return 0


def cmd_crop_nfov(args):
    src = data_mod.load_image(args.input)
    if src.shape[-1] != 2 * src.shape[-2]:
        raise GeometryError("input panorama must satisfy W = 2H")
    if args.random_view:
        rng = np.random.default_rng(args.seed)
        view = random_view(rng)
    else:
        theta = math.radians(args.theta)
        phi = math.radians(args.phi)
        center = (math.sin(phi) * math.cos(theta), math.sin(phi) * math.sin(theta),
                  math.cos(phi))
        view = ViewSpec(center=center, fov_deg=args.fov, roll=args.roll)
    partial, mask = nfov_to_equirect(src, view, fill=args.fill)
    data_mod.save_image(partial, args.out_partial)
    data_mod.save_mask(mask, args.out_mask)
    print(json.dumps({"partial": str(args.out_partial), "mask": str(args.out_mask),
                      "center": list(view.center), "fov": view.fov_deg}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spheregen",
                                description="Symmetry-controllable spherical image generation")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("make-dataset", help="render a synthetic panorama corpus")
    d.add_argument("--out", required=True)
    d.add_argument("--n", type=int, required=True)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--height", type=int, default=64)
    d.add_argument("--mix", help="label weights, e.g. 'rot180=2,asym=1'")
    d.add_argument("--force", action="store_true")
    d.set_defaults(func=cmd_make_dataset)

    t = sub.add_parser("train", help="train on a corpus")
    t.add_argument("--corpus", required=True)
    t.add_argument("--workdir", required=True)
    t.add_argument("--config", help="YAML config file")
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--preset", choices=["desk", "full"])
    t.add_argument("--loss-mode", choices=["both", "rec", "gen"], dest="loss_mode")
    t.add_argument("--no-symmetry-control", action="store_true")
    t.add_argument("--no-weight", action="store_true")
    t.add_argument("--no-circular-padding", action="store_true")
    t.add_argument("--resume")
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="generate a panorama from a partial image")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--input", required=True, help="partial equirect PNG (W = 2H)")
    g.add_argument("--mask", help="optional mask PNG of the visible region")
    g.add_argument("--s", help="five comma-separated intensities in [0,1]")
    g.add_argument("--s-preset", choices=sorted(S_PRESETS), dest="s_preset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", help="evaluation report (FID, SEM sweep, seam)")
    e.add_argument("--checkpoint")
    e.add_argument("--corpus", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--n-gen", type=int, default=64, dest="n_gen")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--ablation", choices=["none", "loss", "padding"], default="none")
    e.add_argument("--ablation-steps", type=int, default=300, dest="ablation_steps")
    e.add_argument("--config", help="YAML config with model/train overrides for ablations")
    e.add_argument("--montage", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("crop-nfov", help="crop an NFOV view from a panorama")
    c.add_argument("--input", required=True)
    c.add_argument("--fov", type=float, default=90.0)
    c.add_argument("--theta", type=float, default=0.0, help="view longitude, degrees")
    c.add_argument("--phi", type=float, default=90.0, help="view colatitude, degrees")
    c.add_argument("--roll", type=float, default=0.0, help="roll, radians")
    c.add_argument("--fill", type=float, default=0.5)
    c.add_argument("--random-view", action="store_true")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out-partial", required=True)
    c.add_argument("--out-mask", required=True)
    c.set_defaults(func=cmd_crop_nfov)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ObjectiveError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GeometryError, CheckpointError, FileNotFoundError, FileExistsError,
            ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
