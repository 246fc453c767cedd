"""Operator entry points: train, generate, compose, evaluate, make-synth.

Every RunConfig field is exposed as a flag of the same name; flags override
values from --config, which override the documented defaults. Inference
commands load the config stored in the checkpoint and apply any explicit
flag overrides on top (handy for ablation runs).

Exit codes: 0 success, 2 usage error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .composer import ForegroundTransform, generate_composite
from .config import RunConfig, load_config, save_config
from .core import new_rng, sample_latent
from .data import _to_u8, load_dataset, make_synthetic_dataset, save_subdataset
from .metrics import (
    STYLE_RELEVANCE_NOTE,
    IdentityFeatures,
    RandomConvClassifier,
    RandomConvFeatures,
    conditional_is,
    inception_score,
    lpips_diversity,
    style_relevance,
)
from .trainer import load_checkpoint, save_checkpoint, train

METRICS = ("is", "cis", "lpips", "style-relevance")


def _save_image(img: torch.Tensor, path: Path) -> None:
    Image.fromarray(_to_u8(img.detach()).transpose(1, 2, 0)).save(path)


def _save_map(m: torch.Tensor, path: Path) -> None:
    u8 = np.clip(np.round(m.detach()[0].numpy() * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(path)


def _save_grid(rows: list[list[torch.Tensor]], path: Path, pad: int = 2) -> None:
    """Tile images into one PNG: one row per group, one column per sample."""
    res = rows[0][0].shape[-1]
    n_cols = max(len(r) for r in rows)
    canvas = np.zeros(
        (len(rows) * (res + pad) - pad, n_cols * (res + pad) - pad, 3), dtype=np.uint8
    )
    for r, row in enumerate(rows):
        for c, img in enumerate(row):
            y, x = r * (res + pad), c * (res + pad)
            canvas[y : y + res, x : x + res] = _to_u8(img.detach()).transpose(1, 2, 0)
    Image.fromarray(canvas).save(path)


def _add_config_flags(parser: argparse.ArgumentParser, skip: tuple[str, ...] = ()) -> None:
    group = parser.add_argument_group("config overrides")
    for field in dataclasses.fields(RunConfig):
        if field.name in skip:
            continue
        flag = "--" + field.name.replace("_", "-")
        if field.type == "bool":
            group.add_argument(flag, dest=field.name, action=argparse.BooleanOptionalAction,
                               default=None)
        elif field.type == "int":
            group.add_argument(flag, dest=field.name, type=int, default=None)
        else:
            group.add_argument(flag, dest=field.name, type=float, default=None)


def _resolve_config(args: argparse.Namespace, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    overrides = {
        f.name: getattr(args, f.name)
        for f in dataclasses.fields(RunConfig)
        if getattr(args, f.name, None) is not None
    }
    return cfg.replace(**overrides) if overrides else cfg


def _draw_triple(rng: torch.Generator, d_z: int, n: int = 1):
    """Latents in the canonical order: shape, background, foreground."""
    z_shape = sample_latent(rng, d_z, n)
    z_bg = sample_latent(rng, d_z, n)
    z_fg = sample_latent(rng, d_z, n)
    return z_shape, z_bg, z_fg


def _batched_latents(rng: torch.Generator, d_z: int, n: int, mode: str):
    """Latent triples for n samples under one generation protocol."""
    if mode == "free":
        return _draw_triple(rng, d_z, n)
    if mode == "fixed-bg":
        z_bg = sample_latent(rng, d_z, 1).expand(n, -1)
        z_shape = sample_latent(rng, d_z, n)
        z_fg = sample_latent(rng, d_z, n)
        return z_shape, z_bg, z_fg
    if mode == "fixed-fg":
        z_shape = sample_latent(rng, d_z, 1).expand(n, -1)
        z_fg = sample_latent(rng, d_z, 1).expand(n, -1)
        z_bg = sample_latent(rng, d_z, n)
        return z_shape, z_bg, z_fg
    raise ValueError(f"unknown mode {mode!r}")


def _generate_batch(state, cfg, z_shape, z_bg, z_fg, chunk: int = 64):
    """Run the pipeline over batched latents, chunked to bound memory."""
    results = []
    n = z_shape.shape[0]
    with torch.no_grad():
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            results.append(
                generate_composite(
                    state.gens, state.modifier, z_fg[lo:hi], z_bg[lo:hi], z_shape[lo:hi], cfg
                )
            )
    return results


def _cat_field(results, name: str) -> torch.Tensor:
    return torch.cat([getattr(r, name) for r in results])


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    if args.fg_dir:
        dataset = load_dataset(args.fg_dir, args.bg_dir or args.fg_dir, cfg.resolution)
    elif args.synthetic:
        dataset = make_synthetic_dataset(args.synthetic, cfg.resolution, cfg.seed)
    else:
        raise SystemExit("train needs --fg-dir or --synthetic N")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "config.yaml")
    state, rows = train(cfg, dataset, args.steps, out_dir, resume_from=args.resume)
    save_checkpoint(state, out_dir / "checkpoint_last.pt")
    print(f"trained to step {state.step}; final total loss {rows[-1]['total']:.4f}"
          if rows else f"already at step {state.step}")
    return 0


def cmd_generate(args) -> int:
    if args.n == 0:
        return 0
    state = load_checkpoint(args.checkpoint)
    cfg = _resolve_config(args, base=state.cfg)
    rng = new_rng(args.seed if args.seed is not None else cfg.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    z_shape, z_bg, z_fg = _batched_latents(rng, cfg.d_z, args.n, args.mode)
    results = _generate_batch(state, cfg, z_shape, z_bg, z_fg)
    composites = _cat_field(results, "composite")
    for i in range(args.n):
        _save_image(composites[i], out_dir / f"sample_{i:03d}.png")
    _save_grid([[composites[i] for i in range(args.n)]], out_dir / "grid.png")
    print(f"wrote {args.n} samples to {out_dir}")
    return 0


def cmd_compose(args) -> int:
    state = load_checkpoint(args.checkpoint)
    cfg = _resolve_config(args, base=state.cfg)
    rng = new_rng(args.seed if args.seed is not None else cfg.seed)
    transform = ForegroundTransform(
        dx=args.dx, dy=args.dy, flip_horizontal=args.flip, rotation=args.rot, scale=args.scale
    )
    z_shape, z_bg, z_fg = _draw_triple(rng, cfg.d_z)
    with torch.no_grad():
        result = generate_composite(
            state.gens, state.modifier, z_fg[0], z_bg[0], z_shape[0], cfg, transform
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _save_image(result.composite, out_dir / "composite.png")
    _save_map(result.shape_mask, out_dir / "shape.png")
    _save_map(result.gen_mask, out_dir / "generated_mask.png")
    _save_image(result.fg_image, out_dir / "foreground.png")
    _save_image(result.bg_image, out_dir / "background.png")
    _save_image(result.image, out_dir / "modified_image.png")
    _save_image(result.bg_compat, out_dir / "compatible_background.png")
    print(f"wrote composite and layers to {out_dir}")
    return 0


def _evaluate_groups(state, cfg, rng, groups: int, samples_per_group: int):
    grouped = []
    for _ in range(groups):
        z_shape, z_bg, z_fg = _batched_latents(rng, cfg.d_z, samples_per_group, "fixed-bg")
        results = _generate_batch(state, cfg, z_shape, z_bg, z_fg)
        grouped.append(_cat_field(results, "composite"))
    return grouped


def cmd_evaluate(args) -> int:
    state = load_checkpoint(args.checkpoint)
    cfg = _resolve_config(args, base=state.cfg)
    seed = args.seed if args.seed is not None else cfg.seed
    rng = new_rng(seed)
    protocol: dict = {}
    std = None
    if args.metric == "is":
        classifier = RandomConvClassifier(seed=cfg.seed)
        z = _batched_latents(rng, cfg.d_z, args.n, "free")
        images = _cat_field(_generate_batch(state, cfg, *z), "composite")
        value, std = inception_score(images, classifier, args.splits)
        protocol = {"n": args.n, "splits": args.splits}
        embedder_id = classifier.identifier
    elif args.metric == "cis":
        classifier = RandomConvClassifier(seed=cfg.seed)
        samples = args.samples_per_group or 256
        grouped = _evaluate_groups(state, cfg, rng, args.groups, samples)
        value, std = conditional_is(grouped, classifier)
        protocol = {"groups": args.groups, "samples_per_group": samples}
        embedder_id = classifier.identifier
    elif args.metric == "lpips":
        embedder = RandomConvFeatures(seed=cfg.seed)
        samples = args.samples_per_group or 20
        grouped = _evaluate_groups(state, cfg, rng, args.groups, samples)
        value = lpips_diversity(grouped, embedder, args.pairs_per_group, rng)
        protocol = {
            "groups": args.groups,
            "samples_per_group": samples,
            "pairs_per_group": args.pairs_per_group,
        }
        embedder_id = embedder.identifier
    elif args.metric == "style-relevance":
        embedder = IdentityFeatures()
        z = _batched_latents(rng, cfg.d_z, args.n, "free")
        results = _generate_batch(state, cfg, *z)
        fg_regions = _cat_field(results, "fg_image") * _cat_field(results, "compose_mask")
        bg_regions = _cat_field(results, "bg_compat")
        value = style_relevance(fg_regions, bg_regions, embedder)
        protocol = {"n": args.n, "note": STYLE_RELEVANCE_NOTE}
        embedder_id = embedder.identifier
    else:  # argparse choices should prevent this
        raise ValueError(f"unknown metric {args.metric!r}")
    report = {
        "metric": args.metric,
        "value": value,
        "std": std,
        "protocol": protocol,
        "embedder": embedder_id,
        "seed": seed,
    }
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text)
    return 0


def cmd_make_synth(args) -> int:
    ds = make_synthetic_dataset(args.n, args.resolution, args.seed)
    save_subdataset(ds.foreground_set, args.out)
    print(f"wrote {args.n} synthetic samples to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fgbg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model")
    p_train.add_argument("--config", help="YAML config file")
    p_train.add_argument("--fg-dir", help="foreground sub-dataset root")
    p_train.add_argument("--bg-dir", help="background sub-dataset root (defaults to --fg-dir)")
    p_train.add_argument("--synthetic", type=int, default=0,
                         help="train on N procedural synthetic samples instead of a directory")
    p_train.add_argument("--steps", type=int, default=2000)
    p_train.add_argument("--out", default="runs/default")
    p_train.add_argument("--resume", help="checkpoint to resume from")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_gen = sub.add_parser("generate", help="sample composites from a checkpoint")
    p_gen.add_argument("--checkpoint", required=True)
    p_gen.add_argument("--n", type=int, default=8)
    p_gen.add_argument("--mode", choices=("free", "fixed-bg", "fixed-fg"), default="free")
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.add_argument("--out", default="out/generate")
    _add_config_flags(p_gen, skip=("seed",))
    p_gen.set_defaults(func=cmd_generate)

    p_comp = sub.add_parser("compose", help="compose one sample with a foreground transform")
    p_comp.add_argument("--checkpoint", required=True)
    p_comp.add_argument("--seed", type=int, default=None)
    p_comp.add_argument("--dx", type=int, default=0)
    p_comp.add_argument("--dy", type=int, default=0)
    p_comp.add_argument("--flip", action="store_true")
    p_comp.add_argument("--rot", type=float, default=0.0)
    p_comp.add_argument("--scale", type=float, default=1.0)
    p_comp.add_argument("--out", default="out/compose")
    _add_config_flags(p_comp, skip=("seed",))
    p_comp.set_defaults(func=cmd_compose)

    p_eval = sub.add_parser("evaluate", help="run an evaluation protocol")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--metric", choices=METRICS, required=True)
    p_eval.add_argument("--n", type=int, default=256, help="sample count for is/style-relevance")
    p_eval.add_argument("--splits", type=int, default=10)
    p_eval.add_argument("--groups", type=int, default=10)
    p_eval.add_argument("--samples-per-group", type=int, default=None)
    p_eval.add_argument("--pairs-per-group", type=int, default=19)
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--out", help="write the JSON report here as well as stdout")
    _add_config_flags(p_eval, skip=("seed",))
    p_eval.set_defaults(func=cmd_evaluate)

    p_synth = sub.add_parser("make-synth", help="write a procedural synthetic dataset")
    p_synth.add_argument("--n", type=int, default=8)
    p_synth.add_argument("--resolution", type=int, default=32)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_make_synth)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
