"""Every training loss term and their weighted combination.

All norms written as ||.||_2 in the objective are realized as per-element
mean squared error, which keeps the loss weights resolution-independent.
Generator-side adversarial terms use the non-saturating -log D(fake) form;
the discriminator side keeps the written log form exactly. Scores are clamped
1e-7 away from {0, 1} so no loss can produce NaN from a saturated sigmoid.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields

import torch

from .config import RunConfig
from .exceptions import EmbedderError, NonFiniteLossError

logger = logging.getLogger(__name__)

EPS = 1e-7


def _scalar(value) -> float:
    return float(value.detach()) if isinstance(value, torch.Tensor) else float(value)


def _as_scores(scores) -> torch.Tensor:
    t = scores if isinstance(scores, torch.Tensor) else torch.as_tensor(scores, dtype=torch.float64)
    t = t.reshape(-1)
    if t.numel() == 0:
        raise ValueError("empty score batch")
    return t.clamp(EPS, 1.0 - EPS)


def adv_loss_generator(scores_fake) -> torch.Tensor:
    """Non-saturating generator loss: mean of -log(score) over the batch."""
    return -torch.log(_as_scores(scores_fake)).mean()


def adv_loss_discriminator(scores_real, scores_fake) -> torch.Tensor:
    """Standard log loss for a real/fake discriminator, batch-averaged per side."""
    real = _as_scores(scores_real)
    fake = _as_scores(scores_fake)
    return -torch.log(real).mean() - torch.log1p(-fake).mean()


def imgseg_adv_loss_discriminator(s_real, s_mismatch, s_fake) -> torch.Tensor:
    """Matching-aware discriminator loss over (real, mismatched, generated) pairs.

    Returns the negated quantity the discriminator maximizes:
    -[log s_real + log(1 - s_mismatch) + log(1 - s_fake)], batch-averaged.
    """
    real = _as_scores(s_real)
    mismatch = _as_scores(s_mismatch)
    fake = _as_scores(s_fake)
    return (
        -torch.log(real).mean()
        - torch.log1p(-mismatch).mean()
        - torch.log1p(-fake).mean()
    )


def fg_shape_loss(gen_mask: torch.Tensor, shape_mask: torch.Tensor) -> torch.Tensor:
    """Mean squared error between the modifier's mask and the target shape."""
    if gen_mask.shape != shape_mask.shape:
        raise ValueError(
            f"mask shapes differ: {tuple(gen_mask.shape)} vs {tuple(shape_mask.shape)}"
        )
    return ((gen_mask - shape_mask) ** 2).mean()


def attn_bg_loss(
    attention: torch.Tensor,
    bg_image: torch.Tensor,
    image: torch.Tensor,
    shape_mask: torch.Tensor,
) -> torch.Tensor:
    """Attention-weighted background preservation plus attention-target alignment.

    MSE(attention * bg_image, attention * image) + MSE(attention, 1 - shape_mask);
    the attention map broadcasts across the three color channels.
    """
    if bg_image.shape != image.shape:
        raise ValueError(
            f"image shapes differ: {tuple(bg_image.shape)} vs {tuple(image.shape)}"
        )
    if attention.shape != shape_mask.shape:
        raise ValueError(
            f"map shapes differ: {tuple(attention.shape)} vs {tuple(shape_mask.shape)}"
        )
    preserve = ((attention * bg_image - attention * image) ** 2).mean()
    target = ((attention - (1.0 - shape_mask)) ** 2).mean()
    return preserve + target


def feature_matching_loss(feats_real, feats_fake) -> torch.Tensor:
    """Mean absolute difference per tap, averaged over taps."""
    if len(feats_real) != len(feats_fake):
        raise ValueError(f"tap count mismatch: {len(feats_real)} vs {len(feats_fake)}")
    if not feats_real:
        raise ValueError("empty feature lists")
    total = 0.0
    for i, (real, fake) in enumerate(zip(feats_real, feats_fake)):
        if real.shape != fake.shape:
            raise ValueError(
                f"tap {i} shape mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}"
            )
        total = total + (real - fake).abs().mean()
    return total / len(feats_real)


def perceptual_loss(x: torch.Tensor, y: torch.Tensor, embedder) -> torch.Tensor:
    """Sum over embedder taps of mean absolute feature differences.

    `embedder` is any callable mapping an image batch to a list of feature
    tensors; failures surface as EmbedderError.
    """
    try:
        taps_x = embedder(x)
        taps_y = embedder(y)
    except Exception as exc:
        raise EmbedderError(f"embedder failed: {exc}") from exc
    total = 0.0
    for tap_x, tap_y in zip(taps_x, taps_y):
        total = total + (tap_x - tap_y).abs().mean()
    return total


def background_adv_loss(scores_real, scores_fake) -> torch.Tensor:
    """Log adversarial loss over background-region patch scores.

    Either side may be empty when a batch had no usable background patch; the
    missing term is skipped with a warning (returns only the available term,
    or 0 when both are empty).
    """

    def _maybe(scores):
        t = scores if isinstance(scores, torch.Tensor) else torch.as_tensor(
            scores, dtype=torch.float64
        )
        return None if t.numel() == 0 else t.reshape(-1).clamp(EPS, 1.0 - EPS)

    real = _maybe(scores_real)
    fake = _maybe(scores_fake)
    if real is None and fake is None:
        logger.warning("no valid background patches in batch; skipping background loss")
        return torch.tensor(0.0)
    total = 0.0
    if real is not None:
        total = total - torch.log(real).mean()
    else:
        logger.warning("no valid real background patches in batch; real term skipped")
    if fake is not None:
        total = total - torch.log1p(-fake).mean()
    return total


def random_patches(images: torch.Tensor, patch_size: int, rng: torch.Generator) -> torch.Tensor:
    """Uniformly positioned square crops, one per image in the batch."""
    n, _, h, w = images.shape
    tops = torch.randint(0, h - patch_size + 1, (n,), generator=rng)
    lefts = torch.randint(0, w - patch_size + 1, (n,), generator=rng)
    return torch.stack(
        [images[i, :, t : t + patch_size, l : l + patch_size] for i, (t, l) in enumerate(zip(tops, lefts))]
    )


def background_patches(
    images: torch.Tensor,
    masks: torch.Tensor,
    patch_size: int,
    rng: torch.Generator,
    max_fg_fraction: float = 0.3,
    tries: int = 8,
) -> torch.Tensor:
    """Crops of the foreground-blanked images that are mostly background.

    For each sample, up to `tries` random crop positions are tested; the first
    whose foreground fraction is at most `max_fg_fraction` is kept. Samples
    with no acceptable crop are dropped, so the result may hold fewer patches
    than the batch (possibly zero).
    """
    n, _, h, w = images.shape
    blanked = images * (1.0 - masks)
    kept = []
    for i in range(n):
        for _ in range(tries):
            top = int(torch.randint(0, h - patch_size + 1, (1,), generator=rng))
            left = int(torch.randint(0, w - patch_size + 1, (1,), generator=rng))
            frac = masks[i, :, top : top + patch_size, left : left + patch_size].mean()
            if frac <= max_fg_fraction:
                kept.append(blanked[i, :, top : top + patch_size, left : left + patch_size])
                break
    if not kept:
        return images.new_zeros((0, 3, patch_size, patch_size))
    return torch.stack(kept)


@dataclass
class LossBundle:
    """Named loss terms plus their weighted total.

    Fields may hold 0-dim tensors (inside the training graph) or plain floats
    (after `as_floats`, e.g. for logging).
    """

    bg: object = 0.0
    fg_adv: object = 0.0
    fm: object = 0.0
    perceptual: object = 0.0
    s_adv: object = 0.0
    img_adv: object = 0.0
    imgseg_adv: object = 0.0
    fg_shape: object = 0.0
    attn_bg: object = 0.0
    total: object = 0.0

    def as_floats(self) -> "LossBundle":
        return LossBundle(**{f.name: _scalar(getattr(self, f.name)) for f in fields(self)})

    def to_dict(self) -> dict:
        return {f.name: _scalar(getattr(self, f.name)) for f in fields(self)}


def total_loss(
    cfg: RunConfig,
    bg=0.0,
    fg_adv=0.0,
    fm=0.0,
    perceptual=0.0,
    s_adv=0.0,
    img_adv=0.0,
    imgseg_adv=0.0,
    fg_shape=0.0,
    attn_bg=0.0,
) -> LossBundle:
    """Combine parts into the full objective.

    total = bg + (fg_adv + fm_weight*fm + p_weight*perceptual) + s_adv
          + img_adv + imgseg_adv + lambda1*fg_shape + lambda2*attn_bg

    Any non-finite part raises NonFiniteLossError naming the offending term.
    """
    parts = {
        "bg": bg,
        "fg_adv": fg_adv,
        "fm": fm,
        "perceptual": perceptual,
        "s_adv": s_adv,
        "img_adv": img_adv,
        "imgseg_adv": imgseg_adv,
        "fg_shape": fg_shape,
        "attn_bg": attn_bg,
    }
    for name, value in parts.items():
        scalar = _scalar(value)
        if not math.isfinite(scalar):
            raise NonFiniteLossError(name, scalar)
    total = (
        bg
        + fg_adv
        + cfg.fm_weight * fm
        + cfg.p_weight * perceptual
        + s_adv
        + img_adv
        + imgseg_adv
        + cfg.lambda1 * fg_shape
        + cfg.lambda2 * attn_bg
    )
    return LossBundle(total=total, **parts)
