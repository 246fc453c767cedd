"""Shared tensor contracts and seeded random sampling.

Conventions used everywhere in the package:

* images are float tensors shaped ``[3, H, W]`` (or batched ``[N, 3, H, W]``)
  with values in ``[-1, 1]``
* spatial maps (shape masks, generated masks, attention maps) are
  ``[1, H, W]`` / ``[N, 1, H, W]`` with values in ``[0, 1]``
* feature maps are ``[C, H', W']`` / ``[N, C, H', W']`` and merely finite
* latent codes are flat vectors of length ``d_z``, standard normal

These helpers raise ``ValueError`` on contract violations so every producing
operation can assert its own output cheaply.
"""

from __future__ import annotations

import torch

RANGE_TOL = 1e-6  # slack for activation outputs that sit exactly on a bound


def new_rng(seed: int) -> torch.Generator:
    """Create an explicit CPU RNG state. Never shared implicitly."""
    gen = torch.Generator(device="cpu")
    gen.manual_seed(int(seed))
    return gen


def sample_latent(rng: torch.Generator, d_z: int, n: int | None = None) -> torch.Tensor:
    """Draw i.i.d. standard-normal latent codes, deterministic given `rng` state.

    Returns shape ``[d_z]``, or ``[n, d_z]`` when `n` is given.
    """
    if d_z <= 0:
        raise ValueError(f"d_z must be >= 1, got {d_z}")
    shape = (d_z,) if n is None else (int(n), d_z)
    return torch.randn(shape, generator=rng)


def check_latent(z: torch.Tensor, d_z: int) -> torch.Tensor:
    if z.shape[-1] != d_z:
        raise ValueError(f"latent length {z.shape[-1]} != configured d_z {d_z}")
    if not torch.isfinite(z).all():
        raise ValueError("latent contains non-finite entries")
    return z


def check_image(img: torch.Tensor, resolution: int | None = None) -> torch.Tensor:
    """Validate an image tensor: 3 channels, square, values in [-1, 1]."""
    if img.dim() not in (3, 4) or img.shape[-3] != 3:
        raise ValueError(f"image must be [*, 3, H, W], got shape {tuple(img.shape)}")
    if resolution is not None and (img.shape[-2] != resolution or img.shape[-1] != resolution):
        raise ValueError(
            f"image is {img.shape[-2]}x{img.shape[-1]}, expected {resolution}x{resolution}"
        )
    if not torch.isfinite(img).all():
        raise ValueError("image contains non-finite entries")
    if img.min() < -1.0 - RANGE_TOL or img.max() > 1.0 + RANGE_TOL:
        raise ValueError(
            f"image values outside [-1, 1]: min={img.min().item():.4g} max={img.max().item():.4g}"
        )
    return img


def check_spatial_map(m: torch.Tensor, resolution: int | None = None) -> torch.Tensor:
    """Validate a single-channel map with entries in [0, 1]."""
    if m.dim() not in (3, 4) or m.shape[-3] != 1:
        raise ValueError(f"spatial map must be [*, 1, H, W], got shape {tuple(m.shape)}")
    if resolution is not None and (m.shape[-2] != resolution or m.shape[-1] != resolution):
        raise ValueError(
            f"map is {m.shape[-2]}x{m.shape[-1]}, expected {resolution}x{resolution}"
        )
    if not torch.isfinite(m).all():
        raise ValueError("spatial map contains non-finite entries")
    if m.min() < -RANGE_TOL or m.max() > 1.0 + RANGE_TOL:
        raise ValueError(
            f"spatial map values outside [0, 1]: min={m.min().item():.4g} max={m.max().item():.4g}"
        )
    return m


def check_feature_map(f: torch.Tensor) -> torch.Tensor:
    if f.dim() not in (3, 4):
        raise ValueError(f"feature map must be [*, C, H, W], got shape {tuple(f.shape)}")
    if not torch.isfinite(f).all():
        raise ValueError("feature map contains non-finite entries")
    return f
