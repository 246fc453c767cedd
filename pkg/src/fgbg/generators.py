"""Generator networks: shape, foreground, background, and style alignment.

The three generators share a common upsampling trunk shape (a 4x4 seed tensor
doubled up to the target resolution, channel widths halving per block). The
foreground trunk is conditioned on the shape mask through spatially-adaptive
modulation; the foreground and background paths share one final convolution
(`GeneratorSet.to_image`) so that style alignment happens in a common feature
space right before image synthesis.

Per-channel statistics use the population convention (divide by N) and the
denominator is stabilized as ``std + eps``; the hand oracles in the tests
assume exactly this convention.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import check_feature_map, check_image, check_latent, check_spatial_map


def channel_stats(f: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-channel spatial mean and population std of a [*, C, H, W] tensor."""
    flat = f.flatten(start_dim=-2)
    mean = flat.mean(dim=-1, keepdim=True)
    std = flat.var(dim=-1, unbiased=False, keepdim=True).sqrt()
    return mean.unsqueeze(-1), std.unsqueeze(-1)


def channel_norm(f: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Normalize each channel of each sample to zero mean, unit std."""
    mean, std = channel_stats(f)
    return (f - mean) / (std + eps)


def adain(content: torch.Tensor, style: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Renormalize each content channel to the style channel's mean and std.

    Statistics are per-channel scalars, so `content` and `style` may differ in
    spatial size but must agree in channel count.
    """
    if content.shape[-3] != style.shape[-3]:
        raise ValueError(
            f"channel mismatch: content has {content.shape[-3]}, style has {style.shape[-3]}"
        )
    c_mean, c_std = channel_stats(content)
    s_mean, s_std = channel_stats(style)
    return s_std * (content - c_mean) / (c_std + eps) + s_mean


def soft_adain(
    f_fg: torch.Tensor, f_bg: torch.Tensor, alpha: float, eps: float = 1e-5
) -> torch.Tensor:
    """Convex blend of style-renormalized and original foreground features.

    alpha=0 returns `f_fg` unchanged (the style path is bypassed entirely);
    alpha=1 is plain adain.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if alpha == 0.0:
        return f_fg
    aligned = adain(f_fg, f_bg, eps=eps)
    if alpha == 1.0:
        return aligned
    return alpha * aligned + (1.0 - alpha) * f_fg


def _init_module(module: nn.Module, rng: torch.Generator, std: float = 0.02) -> None:
    """DCGAN-style init, drawn from an explicit generator for determinism."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=rng) * std)
                if m.bias is not None:
                    m.bias.zero_()


class SpadeModulation(nn.Module):
    """Spatially-adaptive modulation driven by a shape mask.

    The input features are channel-normalized (parameter-free), then scaled
    and shifted by maps predicted from the mask: ``out = (1 + gamma) * norm +
    beta``. Forcing the gamma/beta heads to zero therefore reduces this layer
    to plain per-channel normalization.
    """

    def __init__(self, channels: int, hidden: int = 16, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.mask_embed = nn.Conv2d(1, hidden, 3, padding=1)
        self.gamma_head = nn.Conv2d(hidden, channels, 3, padding=1)
        self.beta_head = nn.Conv2d(hidden, channels, 3, padding=1)

    def forward(self, features: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if mask.shape[-2:] != features.shape[-2:]:
            mask = F.interpolate(mask, size=features.shape[-2:], mode="nearest")
        hidden = F.relu(self.mask_embed(mask))
        gamma = self.gamma_head(hidden)
        beta = self.beta_head(hidden)
        return (1.0 + gamma) * channel_norm(features, self.eps) + beta


def spade_modulate(
    features: torch.Tensor, mask: torch.Tensor, module: SpadeModulation
) -> torch.Tensor:
    """Apply a SpadeModulation module; thin functional alias."""
    return module(features, mask)


def trunk_widths(resolution: int, base_channels: int, min_channels: int) -> list[int]:
    """Channel widths from the 4x4 seed up to full resolution, halving per block."""
    n_up = int(math.log2(resolution)) - 2
    return [max(base_channels >> i, min_channels) for i in range(n_up + 1)]


class _UpBlock(nn.Module):
    """Nearest-neighbor 2x upsample, conv, channel norm, leaky relu."""

    def __init__(self, in_ch: int, out_ch: int, eps: float):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.eps = eps

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return F.leaky_relu(channel_norm(self.conv(x), self.eps), 0.2)


class _SpadeUpBlock(nn.Module):
    """Upsample block whose normalization is mask-modulated."""

    def __init__(self, in_ch: int, out_ch: int, eps: float):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.modulate = SpadeModulation(out_ch, eps=eps)

    def forward(self, x, mask):
        x = F.interpolate(x, scale_factor=2, mode="nearest")
        return F.leaky_relu(self.modulate(self.conv(x), mask), 0.2)


class ShapeGenerator(nn.Module):
    """Maps a latent code to a soft foreground shape mask in [0, 1]."""

    def __init__(self, d_z: int, resolution: int, base_channels: int, min_channels: int, eps: float):
        super().__init__()
        widths = trunk_widths(resolution, base_channels, min_channels)
        self.d_z = d_z
        self.seed = nn.Linear(d_z, widths[0] * 16)
        self.blocks = nn.ModuleList(
            _UpBlock(widths[i], widths[i + 1], eps) for i in range(len(widths) - 1)
        )
        self.head = nn.Conv2d(widths[-1], 1, 3, padding=1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        x = self.seed(z).view(z.shape[0], -1, 4, 4)
        for block in self.blocks:
            x = block(x)
        return torch.sigmoid(self.head(x))


class BackgroundGenerator(nn.Module):
    """Maps a latent code to the pre-image feature map of the shared final conv."""

    def __init__(self, d_z: int, resolution: int, base_channels: int, min_channels: int, eps: float):
        super().__init__()
        widths = trunk_widths(resolution, base_channels, min_channels)
        self.d_z = d_z
        self.seed = nn.Linear(d_z, widths[0] * 16)
        self.blocks = nn.ModuleList(
            _UpBlock(widths[i], widths[i + 1], eps) for i in range(len(widths) - 1)
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        x = self.seed(z).view(z.shape[0], -1, 4, 4)
        for block in self.blocks:
            x = block(x)
        return x


class ForegroundGenerator(nn.Module):
    """Shape-conditioned trunk producing foreground features.

    Every block is modulated by the (resized) shape mask, so the generated
    object follows the mask's geometry.
    """

    def __init__(self, d_z: int, resolution: int, base_channels: int, min_channels: int, eps: float):
        super().__init__()
        widths = trunk_widths(resolution, base_channels, min_channels)
        self.d_z = d_z
        self.seed = nn.Linear(d_z, widths[0] * 16)
        self.blocks = nn.ModuleList(
            _SpadeUpBlock(widths[i], widths[i + 1], eps) for i in range(len(widths) - 1)
        )

    def forward(self, z: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.seed(z).view(z.shape[0], -1, 4, 4)
        for block in self.blocks:
            x = block(x, mask)
        return x


def _batched(t: torch.Tensor, rank: int) -> tuple[torch.Tensor, bool]:
    if t.dim() == rank - 1:
        return t.unsqueeze(0), True
    return t, False


class GeneratorSet(nn.Module):
    """All generator-side networks plus the shared final convolution.

    The foreground and background paths emit images through the *same*
    `to_image` conv (one parameter object, stored once in checkpoints), which
    is what makes their feature statistics comparable for style alignment.
    """

    def __init__(
        self,
        d_z: int = 100,
        resolution: int = 32,
        base_channels: int = 128,
        min_channels: int = 16,
        eps: float = 1e-5,
        init_rng: torch.Generator | None = None,
    ):
        super().__init__()
        self.d_z = d_z
        self.resolution = resolution
        self.eps = eps
        args = (d_z, resolution, base_channels, min_channels, eps)
        self.s_gen = ShapeGenerator(*args)
        self.fg_gen = ForegroundGenerator(*args)
        self.bg_gen = BackgroundGenerator(*args)
        feat_ch = trunk_widths(resolution, base_channels, min_channels)[-1]
        self.feature_channels = feat_ch
        self.to_image = nn.Conv2d(feat_ch, 3, 3, padding=1)
        if init_rng is not None:
            _init_module(self, init_rng)
            # wider init on the mask head so initial shapes are spread over
            # [0, 1] instead of sitting flat at sigmoid(0) = 0.5
            _init_module(self.s_gen.head, init_rng, std=0.6)

    def generate_shape(self, z: torch.Tensor) -> torch.Tensor:
        """Latent -> soft shape mask in [0, 1]."""
        z, single = _batched(check_latent(z, self.d_z), 2)
        mask = self.s_gen(z)
        check_spatial_map(mask, self.resolution)
        return mask.squeeze(0) if single else mask

    def generate_background(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Latent -> (background image, pre-image feature map)."""
        z, single = _batched(check_latent(z, self.d_z), 2)
        features = self.bg_gen(z)
        image = torch.tanh(self.to_image(features))
        check_image(image, self.resolution)
        check_feature_map(features)
        if single:
            return image.squeeze(0), features.squeeze(0)
        return image, features

    def generate_foreground(
        self,
        z: torch.Tensor,
        shape_mask: torch.Tensor,
        bg_features: torch.Tensor,
        alpha: float,
    ) -> torch.Tensor:
        """Latent + shape mask + background features -> style-aligned foreground image.

        With alpha=0 the output does not depend on `bg_features` at all.
        """
        z, single = _batched(check_latent(z, self.d_z), 2)
        shape_mask, _ = _batched(shape_mask, 4)
        bg_features, _ = _batched(bg_features, 4)
        check_spatial_map(shape_mask, self.resolution)
        fg_features = self.fg_gen(z, shape_mask)
        if fg_features.shape[-3] != bg_features.shape[-3]:
            raise ValueError(
                f"feature channel mismatch: foreground {fg_features.shape[-3]}, "
                f"background {bg_features.shape[-3]}"
            )
        aligned = soft_adain(fg_features, bg_features, alpha, eps=self.eps)
        image = torch.tanh(self.to_image(aligned))
        check_image(image, self.resolution)
        return image.squeeze(0) if single else image
