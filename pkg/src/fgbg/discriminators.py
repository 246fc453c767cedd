"""Adversaries: shape, foreground, background, image, and image/mask matching.

All discriminators are strided-convolution patch-style encoders ending in a
global-average logit and a sigmoid, so scores are probabilities strictly
inside (0, 1) (clamped 1e-7 from both ends for numerical safety). The
foreground discriminator also exposes its per-block activations for the
feature matching loss; their count and shapes are fixed by the architecture,
which keeps real/fake feature lists pairable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .generators import _init_module

SCORE_CLAMP = 1e-7

KINDS = ("shape", "foreground", "background", "image")


@dataclass
class DiscriminatorOutput:
    score: torch.Tensor                       # [N], probability-of-real in (0, 1)
    features: list[torch.Tensor] = field(default_factory=list)


class PatchEncoder(nn.Module):
    """Downsampling conv stack -> per-sample realness score.

    `n_blocks` halvings from `in_size`; channel width doubles per block.
    """

    def __init__(self, in_channels: int, in_size: int, base_width: int, n_blocks: int = 4):
        super().__init__()
        if in_size >> n_blocks < 2:
            raise ValueError(f"in_size {in_size} too small for {n_blocks} downsampling blocks")
        widths = [base_width * (2**i) for i in range(n_blocks)]
        blocks = []
        prev = in_channels
        for w in widths:
            blocks.append(nn.Conv2d(prev, w, 4, stride=2, padding=1))
            prev = w
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(prev, 1, 3, padding=1)
        self.in_channels = in_channels
        self.in_size = in_size

    def forward(self, x: torch.Tensor, return_features: bool = False) -> DiscriminatorOutput:
        single = x.dim() == 3
        if single:
            x = x.unsqueeze(0)
        if x.shape[-3] != self.in_channels:
            raise ValueError(f"expected {self.in_channels}-channel input, got {x.shape[-3]}")
        if x.shape[-2:] != (self.in_size, self.in_size):
            raise ValueError(
                f"expected {self.in_size}x{self.in_size} input, got {x.shape[-2]}x{x.shape[-1]}"
            )
        features = []
        for block in self.blocks:
            x = F.leaky_relu(block(x), 0.2)
            if return_features:
                features.append(x)
        logit = self.head(x).mean(dim=(-3, -2, -1))
        score = torch.sigmoid(logit).clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)
        if single:
            score = score.squeeze(0)
        return DiscriminatorOutput(score, features)


class DiscriminatorSet(nn.Module):
    """All five adversaries, sized for one working resolution.

    The background discriminator operates on half-resolution patches; the
    image/mask matching discriminator takes the channel-wise concatenation of
    an image and a mask.
    """

    def __init__(
        self,
        resolution: int = 32,
        base_width: int = 32,
        init_rng: torch.Generator | None = None,
    ):
        super().__init__()
        self.resolution = resolution
        self.patch_size = resolution // 2
        # keep the logit map patch-sized (at least 4x4): a global receptive
        # field lets the adversaries memorize tiny datasets outright
        n_blocks = 4 if resolution >= 64 else 3
        self.shape = PatchEncoder(1, resolution, base_width, n_blocks)
        self.foreground = PatchEncoder(3, resolution, base_width, n_blocks)
        self.background = PatchEncoder(3, self.patch_size, base_width, n_blocks - 1)
        self.image = PatchEncoder(3, resolution, base_width, n_blocks)
        self.image_seg = PatchEncoder(4, resolution, base_width, n_blocks)
        if init_rng is not None:
            _init_module(self, init_rng)

    def score_sample(self, kind: str, x: torch.Tensor) -> DiscriminatorOutput:
        """Score one input under the discriminator named by `kind`.

        Shape inputs must be single-channel maps, all others 3-channel images;
        the foreground discriminator also returns its intermediate features.
        """
        if kind not in KINDS:
            raise ValueError(f"unknown discriminator kind {kind!r}, expected one of {KINDS}")
        expected_ch = 1 if kind == "shape" else 3
        if x.shape[-3] != expected_ch:
            raise ValueError(
                f"kind {kind!r} expects {expected_ch}-channel input, got {x.shape[-3]}"
            )
        encoder: PatchEncoder = getattr(self, kind)
        return encoder(x, return_features=(kind == "foreground"))

    def score_image_seg(self, image: torch.Tensor, mask: torch.Tensor) -> DiscriminatorOutput:
        """Joint score of an (image, mask) pair, concatenated channel-wise."""
        if image.shape[-2:] != mask.shape[-2:]:
            raise ValueError(
                f"image {tuple(image.shape[-2:])} and mask {tuple(mask.shape[-2:])} "
                "differ in spatial size"
            )
        return self.image_seg(torch.cat([image, mask], dim=-3))
