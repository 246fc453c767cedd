"""Background modifier: geometric alignment of a generated background to a shape.

Given a background image and a target foreground shape, the modifier emits a
preliminary full image (background altered just enough to support the shape,
e.g. a perch under an object), a foreground mask locating the altered image's
own foreground region, and an attention map consumed only by the training
loss.

Mask polarity note: the emitted mask marks the FOREGROUND region, so the
geometrically compatible background is ``(1 - mask) * image`` (the foreground
region is blanked out and later filled by the composed foreground object).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import check_image, check_spatial_map
from .generators import _init_module


@dataclass
class ModifierOutput:
    """Co-registered outputs of one modifier pass."""

    image: torch.Tensor      # geometrically aligned preliminary image, [*, 3, H, W]
    mask: torch.Tensor       # foreground mask of `image`, [*, 1, H, W]
    attention: torch.Tensor  # training-only attention map, [*, 1, H, W]


class BackgroundModifier(nn.Module):
    """Encoder-decoder over the channel-concatenated (background, shape) pair.

    Three heads share one trunk: a tanh image head and two sigmoid mask heads.
    With `enabled=False` (geometry ablation) the network is bypassed entirely
    and the pass-through contract applies: image = background, mask = shape,
    attention = 1 - shape.
    """

    def __init__(self, width: int = 24, init_rng: torch.Generator | None = None):
        super().__init__()
        self.enc1 = nn.Conv2d(4, width, 3, padding=1)
        self.enc2 = nn.Conv2d(width, width * 2, 3, stride=2, padding=1)
        self.mid = nn.Conv2d(width * 2, width * 2, 3, padding=1)
        self.dec = nn.Conv2d(width * 2 + width, width, 3, padding=1)
        self.image_head = nn.Conv2d(width, 3, 3, padding=1)
        self.mask_head = nn.Conv2d(width, 1, 3, padding=1)
        self.attn_head = nn.Conv2d(width, 1, 3, padding=1)
        if init_rng is not None:
            _init_module(self, init_rng)
            # spread initial mask/attention outputs over [0, 1] (see s_gen.head)
            _init_module(self.mask_head, init_rng, std=0.6)
            _init_module(self.attn_head, init_rng, std=0.6)

    def forward(
        self, bg_image: torch.Tensor, shape_mask: torch.Tensor, enabled: bool = True
    ) -> ModifierOutput:
        single = bg_image.dim() == 3
        if single:
            bg_image = bg_image.unsqueeze(0)
            shape_mask = shape_mask.unsqueeze(0)
        if bg_image.shape[-2:] != shape_mask.shape[-2:]:
            raise ValueError(
                f"background {tuple(bg_image.shape[-2:])} and shape "
                f"{tuple(shape_mask.shape[-2:])} differ in spatial size"
            )
        if enabled:
            h1 = F.leaky_relu(self.enc1(torch.cat([bg_image, shape_mask], dim=-3)), 0.2)
            h2 = F.leaky_relu(self.enc2(h1), 0.2)
            h2 = F.leaky_relu(self.mid(h2), 0.2)
            up = F.interpolate(h2, size=h1.shape[-2:], mode="nearest")
            h3 = F.leaky_relu(self.dec(torch.cat([up, h1], dim=-3)), 0.2)
            image = torch.tanh(self.image_head(h3))
            mask = torch.sigmoid(self.mask_head(h3))
            attention = torch.sigmoid(self.attn_head(h3))
        else:
            image = bg_image
            mask = shape_mask
            attention = 1.0 - shape_mask
        check_image(image)
        check_spatial_map(mask)
        check_spatial_map(attention)
        if single:
            return ModifierOutput(image.squeeze(0), mask.squeeze(0), attention.squeeze(0))
        return ModifierOutput(image, mask, attention)


def modify_background(
    modifier: BackgroundModifier,
    bg_image: torch.Tensor,
    shape_mask: torch.Tensor,
    enabled: bool = True,
) -> ModifierOutput:
    """Functional alias for a modifier forward pass."""
    return modifier(bg_image, shape_mask, enabled=enabled)


def extract_compatible_background(image: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Blank the foreground region of `image`: returns ``(1 - mask) * image``.

    Linear in `image`; the mask is broadcast across the color channels.
    """
    return (1.0 - mask) * image


def binarize_mask(mask: torch.Tensor, threshold: float = 0.5) -> torch.Tensor:
    """Threshold a soft mask to exact {0, 1}; entries equal to the threshold go to 0."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    return (mask > threshold).to(mask.dtype)
