"""Adversarial training loop, checkpointing, and resume.

Update order per batch: one step over all discriminators, then one step over
all generator-side networks (shape/foreground/background generators, the
background modifier, and the shared final conv). The two optimizers own
disjoint parameter sets, so neither phase can touch the other side.

Checkpoints are archives of named tensors with a shape/dtype manifest and a
format-version field; the shared final convolution appears exactly once under
its canonical name (`gens.to_image.*`). Together with the saved RNG state and
optimizer moments, a resumed run reproduces the original step stream bit for
bit in deterministic mode.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import torch

from .config import RunConfig, config_from_dict
from .core import new_rng, sample_latent
from .data import DatasetPair, Sample, sample_batch
from .discriminators import DiscriminatorSet
from .exceptions import CheckpointError, NonFiniteLossError
from .generators import GeneratorSet
from .losses import (
    LossBundle,
    adv_loss_discriminator,
    adv_loss_generator,
    attn_bg_loss,
    background_adv_loss,
    background_patches,
    feature_matching_loss,
    fg_shape_loss,
    imgseg_adv_loss_discriminator,
    perceptual_loss,
    random_patches,
    total_loss,
)
from .metrics import RandomConvFeatures
from .modifier import BackgroundModifier

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class TrainState:
    """Everything a run needs to continue: parameters, moments, counters, RNG."""

    cfg: RunConfig
    gens: GeneratorSet
    modifier: BackgroundModifier
    discs: DiscriminatorSet
    embedder: RandomConvFeatures
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: torch.Generator
    step: int = 0


def build_train_state(cfg: RunConfig) -> TrainState:
    """Fresh state; all weight init and run randomness derives from cfg.seed."""
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)
        # single-threaded reductions are order-stable (and faster at this scale)
        torch.set_num_threads(1)
    init_rng = new_rng(cfg.seed)
    gens = GeneratorSet(
        d_z=cfg.d_z,
        resolution=cfg.resolution,
        base_channels=cfg.base_channels,
        min_channels=cfg.min_channels,
        eps=cfg.epsilon,
        init_rng=init_rng,
    )
    modifier = BackgroundModifier(width=cfg.modifier_channels, init_rng=init_rng)
    discs = DiscriminatorSet(cfg.resolution, cfg.d_channels, init_rng=init_rng)
    embedder = RandomConvFeatures(seed=cfg.seed + 2)
    opt_g = torch.optim.Adam(
        list(gens.parameters()) + list(modifier.parameters()),
        lr=cfg.lr,
        betas=(cfg.beta1, cfg.beta2),
    )
    opt_d = torch.optim.Adam(discs.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    return TrainState(cfg, gens, modifier, discs, embedder, opt_g, opt_d, new_rng(cfg.seed + 1))


def _stack(batch: list[Sample]) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    images = torch.stack([s.image for s in batch])
    foregrounds = torch.stack([s.foreground for s in batch])
    masks = torch.stack([s.mask for s in batch])
    return images, foregrounds, masks


def _batch_mean_taps(embedder):
    """Wrap a feature embedder to emit batch-averaged taps."""

    def wrapped(images):
        return [t.mean(0, keepdim=True) for t in embedder(images)]

    return wrapped


def train_step(
    state: TrainState, batch: list[Sample], bg_batch: list[Sample] | None = None
) -> tuple[TrainState, LossBundle]:
    """One discriminator step followed by one generator step.

    `batch` supplies real foreground objects and shapes; `bg_batch` (defaults
    to `batch`) supplies real full images, their masks, and background
    patches. Mismatched masks for the matching-aware discriminator are the
    batch's masks rolled by one.
    """
    if not batch:
        raise ValueError("empty batch")
    cfg = state.cfg
    if bg_batch is None:
        bg_batch = batch
    _, real_fg, fg_masks = _stack(batch)
    real_x, _, real_m = _stack(bg_batch)
    mismatched_m = torch.roll(real_m, shifts=1, dims=0)
    n = len(batch)
    alpha = cfg.effective_alpha
    geo = cfg.geometry_alignment_enabled
    patch = state.discs.patch_size

    z_shape = sample_latent(state.rng, cfg.d_z, n)
    z_bg = sample_latent(state.rng, cfg.d_z, n)
    z_fg = sample_latent(state.rng, cfg.d_z, n)

    # discriminator phase: fakes detached by generating without grad
    with torch.no_grad():
        shape_mask = state.gens.generate_shape(z_shape)
        bg_image, bg_features = state.gens.generate_background(z_bg)
        fg_image = state.gens.generate_foreground(z_fg, shape_mask, bg_features, alpha)
        fake_fg = fg_image * shape_mask
        mod = state.modifier(bg_image, shape_mask, enabled=geo)

    real_bg_patches = background_patches(
        real_x, real_m, patch, state.rng, cfg.bg_patch_fraction
    )
    fake_bg_patches = random_patches(bg_image, patch, state.rng)

    d_loss = (
        adv_loss_discriminator(
            state.discs.score_sample("shape", fg_masks).score,
            state.discs.score_sample("shape", shape_mask).score,
        )
        + adv_loss_discriminator(
            state.discs.score_sample("foreground", real_fg).score,
            state.discs.score_sample("foreground", fake_fg).score,
        )
        + background_adv_loss(
            state.discs.score_sample("background", real_bg_patches).score,
            state.discs.score_sample("background", fake_bg_patches).score,
        )
        + adv_loss_discriminator(
            state.discs.score_sample("image", real_x).score,
            state.discs.score_sample("image", mod.image).score,
        )
        + imgseg_adv_loss_discriminator(
            state.discs.score_image_seg(real_x, real_m).score,
            state.discs.score_image_seg(real_x, mismatched_m).score,
            state.discs.score_image_seg(mod.image, mod.mask).score,
        )
    )
    state.opt_d.zero_grad()
    d_loss.backward()
    state.opt_d.step()

    # generator phase: same latents, fresh graph
    shape_mask = state.gens.generate_shape(z_shape)
    bg_image, bg_features = state.gens.generate_background(z_bg)
    fg_image = state.gens.generate_foreground(z_fg, shape_mask, bg_features, alpha)
    fake_fg = fg_image * shape_mask
    mod = state.modifier(bg_image, shape_mask, enabled=geo)

    # feature matching and the perceptual term compare batch-mean statistics:
    # this is an unpaired setting, so per-index pairing would chase arbitrary
    # batch-mates instead of the training distribution
    with torch.no_grad():
        real_fg_feats = [
            f.mean(0, keepdim=True).detach()
            for f in state.discs.score_sample("foreground", real_fg).features
        ]
    fake_out = state.discs.score_sample("foreground", fake_fg)
    fake_fg_feats = [f.mean(0, keepdim=True) for f in fake_out.features]
    fake_gen_patches = random_patches(bg_image, patch, state.rng)

    bundle = total_loss(
        cfg,
        bg=adv_loss_generator(state.discs.score_sample("background", fake_gen_patches).score),
        fg_adv=adv_loss_generator(fake_out.score),
        fm=feature_matching_loss(real_fg_feats, fake_fg_feats),
        perceptual=perceptual_loss(real_fg, fake_fg, _batch_mean_taps(state.embedder)),
        s_adv=adv_loss_generator(state.discs.score_sample("shape", shape_mask).score),
        img_adv=adv_loss_generator(state.discs.score_sample("image", mod.image).score),
        imgseg_adv=adv_loss_generator(state.discs.score_image_seg(mod.image, mod.mask).score),
        # the shape prior is the target in both mask-alignment terms
        fg_shape=fg_shape_loss(mod.mask, shape_mask.detach()),
        attn_bg=attn_bg_loss(mod.attention, bg_image.detach(), mod.image, shape_mask.detach()),
    )
    state.opt_g.zero_grad()
    bundle.total.backward()
    state.opt_g.step()
    state.step += 1
    return state, bundle.as_floats()


def _tensor_manifest(state_dicts: dict) -> dict:
    manifest = {}
    for module_name, sd in state_dicts.items():
        for name, tensor in sd.items():
            manifest[f"{module_name}.{name}"] = {
                "shape": list(tensor.shape),
                "dtype": str(tensor.dtype),
            }
    return manifest


def save_checkpoint(state: TrainState, path: str | Path) -> None:
    """Write the full train state as a versioned named-tensor archive."""
    tensors = {
        "gens": state.gens.state_dict(),
        "modifier": state.modifier.state_dict(),
        "discs": state.discs.state_dict(),
    }
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": state.cfg.to_dict(),
        "step": state.step,
        "rng_state": state.rng.get_state(),
        "tensors": tensors,
        "tensor_manifest": _tensor_manifest(tensors),
        "optim": {"g": state.opt_g.state_dict(), "d": state.opt_d.state_dict()},
    }
    torch.save(payload, Path(path))


def load_checkpoint(path: str | Path) -> TrainState:
    """Rebuild a TrainState from an archive; rejects unknown format versions."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {version!r} "
            f"(this build reads version {CHECKPOINT_FORMAT_VERSION})"
        )
    cfg = config_from_dict(payload["config"])
    state = build_train_state(cfg)
    state.gens.load_state_dict(payload["tensors"]["gens"])
    state.modifier.load_state_dict(payload["tensors"]["modifier"])
    state.discs.load_state_dict(payload["tensors"]["discs"])
    state.opt_g.load_state_dict(payload["optim"]["g"])
    state.opt_d.load_state_dict(payload["optim"]["d"])
    state.rng.set_state(payload["rng_state"])
    state.step = payload["step"]
    return state


def train(
    cfg: RunConfig,
    dataset: DatasetPair,
    steps: int,
    out_dir: str | Path | None = None,
    resume_from: str | Path | None = None,
) -> tuple[TrainState, list[dict]]:
    """Run `steps` total training steps, logging one loss bundle per step.

    Writes `train_log.jsonl` plus periodic and final checkpoints under
    `out_dir` when given; `resume_from` continues an earlier run (its step
    counter picks up where it left off).
    """
    state = load_checkpoint(resume_from) if resume_from else build_train_state(cfg)
    out_dir = Path(out_dir) if out_dir is not None else None
    log_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "train_log.jsonl"
    rows = []
    cross_dataset = dataset.background_set is not dataset.foreground_set
    with open(log_path, "a") if log_path else _null_writer() as log_file:
        while state.step < steps:
            batch, _ = sample_batch(dataset.foreground_set, state.cfg.batch_size, state.rng)
            bg_batch = None
            if cross_dataset:
                bg_batch, _ = sample_batch(
                    dataset.background_set, state.cfg.batch_size, state.rng
                )
            try:
                state, bundle = train_step(state, batch, bg_batch)
            except NonFiniteLossError as exc:
                logger.error("aborting at step %d: %s", state.step, exc)
                raise
            row = {"step": state.step, **bundle.to_dict()}
            rows.append(row)
            if log_file is not None:
                log_file.write(json.dumps(row) + "\n")
            if out_dir is not None and (
                state.step % cfg.checkpoint_every == 0 or state.step == steps
            ):
                save_checkpoint(state, out_dir / f"checkpoint_step{state.step}.pt")
                save_checkpoint(state, out_dir / "checkpoint_last.pt")
    return state, rows


class _null_writer:
    def __enter__(self):
        return None

    def __exit__(self, *exc):
        return False
