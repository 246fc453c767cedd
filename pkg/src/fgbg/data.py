"""Dataset ingestion, mismatched-mask sampling, and a synthetic dataset.

A sub-dataset on disk is a directory with `images/`, `foregrounds/`, and
`masks/` subdirectories holding 8-bit PNGs keyed by filename stem (masks are
single-channel; `foregrounds/` is optional and derived as image * mask when
absent). Upstream segmentation/screening is a contract of the ingested masks,
not something this module performs.

The synthetic dataset is a deterministic desk-scale stand-in for real photo
collections: one textured ellipse or polygon object per procedurally textured
background, with exact image/foreground/mask consistency by construction.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

logger = logging.getLogger(__name__)


@dataclass
class Sample:
    """One aligned (image, masked foreground object, binary mask) triple."""

    image: torch.Tensor       # [3, H, W] in [-1, 1]
    foreground: torch.Tensor  # [3, H, W], exactly zero outside the mask
    mask: torch.Tensor        # [1, H, W], binary
    stem: str = ""


@dataclass
class DatasetPair:
    """Foreground and background sub-datasets; they may share a source."""

    foreground_set: list[Sample]
    background_set: list[Sample]

    def __post_init__(self):
        if not self.foreground_set or not self.background_set:
            raise ValueError("both sub-datasets must be non-empty")


def _to_unit_float(u8: np.ndarray) -> np.ndarray:
    return (u8.astype(np.float32) / 255.0) * 2.0 - 1.0


def _to_u8(img: torch.Tensor) -> np.ndarray:
    arr = (img.numpy().astype(np.float64) + 1.0) / 2.0 * 255.0
    return np.clip(np.round(arr), 0, 255).astype(np.uint8)


def _validate_sample(s: Sample) -> Sample:
    if not torch.logical_or(s.mask == 0, s.mask == 1).all():
        raise ValueError(f"sample {s.stem!r}: mask is not binary")
    if not torch.equal(s.foreground * (1.0 - s.mask), torch.zeros_like(s.foreground)):
        raise ValueError(f"sample {s.stem!r}: foreground has content outside its mask")
    return s


def load_sample(
    image_path: Path, mask_path: Path, fg_path: Path | None, resolution: int
) -> Sample:
    """Load one triple, resizing to `resolution` and normalizing to [-1, 1]."""
    img = Image.open(image_path).convert("RGB")
    if img.size != (resolution, resolution):
        img = img.resize((resolution, resolution), Image.BILINEAR)
    mask_img = Image.open(mask_path).convert("L")
    if mask_img.size != (resolution, resolution):
        mask_img = mask_img.resize((resolution, resolution), Image.NEAREST)

    image = torch.from_numpy(_to_unit_float(np.asarray(img))).permute(2, 0, 1)
    mask = (torch.from_numpy(np.asarray(mask_img).astype(np.float32) / 255.0) > 0.5)
    mask = mask.to(torch.float32).unsqueeze(0)

    if fg_path is not None and fg_path.is_file():
        fg_img = Image.open(fg_path).convert("RGB")
        if fg_img.size != (resolution, resolution):
            fg_img = fg_img.resize((resolution, resolution), Image.BILINEAR)
        fg = torch.from_numpy(_to_unit_float(np.asarray(fg_img))).permute(2, 0, 1)
    else:
        fg = image
    foreground = fg * mask  # exact zero outside the mask, by construction
    return _validate_sample(Sample(image, foreground, mask, stem=image_path.stem))


def load_subdataset(root: str | Path, resolution: int) -> list[Sample]:
    """Load every usable triple under one sub-dataset root."""
    root = Path(root)
    images_dir = root / "images"
    if not images_dir.is_dir():
        raise FileNotFoundError(f"no images/ directory under {root}")
    samples = []
    for image_path in sorted(images_dir.glob("*.png")):
        mask_path = root / "masks" / image_path.name
        if not mask_path.is_file():
            logger.warning("skipping %s: no matching mask", image_path.name)
            continue
        fg_path = root / "foregrounds" / image_path.name
        samples.append(load_sample(image_path, mask_path, fg_path, resolution))
    if not samples:
        raise ValueError(f"no usable samples under {root}")
    return samples


def load_dataset(fg_dir: str | Path, bg_dir: str | Path, resolution: int) -> DatasetPair:
    """Load a dataset pair; the two roots may differ (cross-dataset runs)."""
    fg_set = load_subdataset(fg_dir, resolution)
    bg_set = fg_set if Path(fg_dir).resolve() == Path(bg_dir).resolve() else load_subdataset(
        bg_dir, resolution
    )
    return DatasetPair(fg_set, bg_set)


def save_subdataset(samples: list[Sample], root: str | Path) -> None:
    """Write samples as the PNG triple layout plus a manifest of stems."""
    root = Path(root)
    for sub in ("images", "foregrounds", "masks"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    stems = []
    for i, s in enumerate(samples):
        stem = s.stem or f"{i:05d}"
        stems.append(stem)
        Image.fromarray(_to_u8(s.image).transpose(1, 2, 0)).save(root / "images" / f"{stem}.png")
        Image.fromarray(_to_u8(s.foreground).transpose(1, 2, 0)).save(
            root / "foregrounds" / f"{stem}.png"
        )
        mask_u8 = (s.mask[0].numpy() * 255).astype(np.uint8)
        Image.fromarray(mask_u8, mode="L").save(root / "masks" / f"{stem}.png")
    manifest = {"stems": stems, "split": {stem: "train" for stem in stems}}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))


def sample_mismatched_mask(
    ds: DatasetPair, idx: int, rng: torch.Generator, subset: str = "background"
) -> torch.Tensor:
    """Mask of a uniformly random sample other than `idx` from one sub-dataset."""
    samples = getattr(ds, f"{subset}_set")
    n = len(samples)
    if n < 2:
        raise ValueError(f"need at least 2 samples to draw a mismatched mask, have {n}")
    j = int(torch.randint(0, n - 1, (1,), generator=rng))
    if j >= idx:
        j += 1
    return samples[j].mask


def sample_batch(
    samples: list[Sample], batch_size: int, rng: torch.Generator
) -> tuple[list[Sample], list[int]]:
    """Uniform with-replacement batch; returns the drawn indices too."""
    idx = torch.randint(0, len(samples), (batch_size,), generator=rng).tolist()
    return [samples[i] for i in idx], idx


def _ellipse_mask(rng: np.random.Generator, resolution: int) -> np.ndarray:
    yy, xx = np.mgrid[0:resolution, 0:resolution]
    cy = rng.uniform(0.3, 0.7) * resolution
    cx = rng.uniform(0.3, 0.7) * resolution
    ry = rng.uniform(0.12, 0.38) * resolution
    rx = rng.uniform(0.12, 0.38) * resolution
    angle = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dy * np.cos(angle) + dx * np.sin(angle)
    v = -dy * np.sin(angle) + dx * np.cos(angle)
    return ((u / ry) ** 2 + (v / rx) ** 2 <= 1.0).astype(np.float32)


def _polygon_mask(rng: np.random.Generator, resolution: int) -> np.ndarray:
    k = int(rng.integers(3, 7))
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=k))
    radii = rng.uniform(0.15, 0.4, size=k) * resolution
    cy = rng.uniform(0.35, 0.65) * resolution
    cx = rng.uniform(0.35, 0.65) * resolution
    pts_y = cy + radii * np.sin(angles)
    pts_x = cx + radii * np.cos(angles)
    yy, xx = np.mgrid[0:resolution, 0:resolution]
    # winding test against each polygon edge (convex by angular ordering)
    inside = np.ones((resolution, resolution), dtype=bool)
    for i in range(k):
        y0, x0 = pts_y[i], pts_x[i]
        y1, x1 = pts_y[(i + 1) % k], pts_x[(i + 1) % k]
        cross = (x1 - x0) * (yy - y0) - (y1 - y0) * (xx - x0)
        inside &= cross >= 0
    return inside.astype(np.float32)


def _texture(rng: np.random.Generator, resolution: int) -> np.ndarray:
    """Smooth random RGB texture in [0, 1]: base color plus sinusoid gradients."""
    yy, xx = np.mgrid[0:resolution, 0:resolution]
    out = np.empty((3, resolution, resolution), dtype=np.float64)
    base = rng.uniform(0.15, 0.85, size=3)
    for c in range(3):
        angle = rng.uniform(0, np.pi)
        freq = rng.uniform(0.5, 3.0) * 2 * np.pi / resolution
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin((yy * np.sin(angle) + xx * np.cos(angle)) * freq + phase)
        out[c] = np.clip(base[c] + 0.25 * wave, 0.0, 1.0)
    return out


def _stripes(rng: np.random.Generator, resolution: int) -> np.ndarray:
    """High-frequency striped RGB texture in [0, 1], visually distinct per object."""
    yy, xx = np.mgrid[0:resolution, 0:resolution]
    angle = rng.uniform(0, np.pi)
    freq = rng.uniform(4.0, 9.0) * 2 * np.pi / resolution
    phase = rng.uniform(0, 2 * np.pi)
    wave = 0.5 + 0.5 * np.sign(np.sin((yy * np.sin(angle) + xx * np.cos(angle)) * freq + phase))
    color_a = rng.uniform(0.0, 1.0, size=3)
    color_b = rng.uniform(0.0, 1.0, size=3)
    return color_a[:, None, None] * wave + color_b[:, None, None] * (1.0 - wave)


def make_synthetic_dataset(n: int, resolution: int, seed: int) -> DatasetPair:
    """A deterministic dataset of textured objects on textured backgrounds.

    Masks are rejected and redrawn until they cover 5-60% of the canvas. The
    foreground and background sub-datasets share the same samples.
    """
    if n < 2:
        raise ValueError(f"need n >= 2 samples, got {n}")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        while True:
            mask = _ellipse_mask(rng, resolution) if rng.random() < 0.5 else _polygon_mask(
                rng, resolution
            )
            if 0.05 <= mask.mean() <= 0.60:
                break
        bg = _texture(rng, resolution)
        fg = _stripes(rng, resolution)
        composite = np.where(mask[None] > 0.5, fg, bg)
        u8 = np.clip(np.round(composite * 255.0), 0, 255).astype(np.uint8)
        image = torch.from_numpy(_to_unit_float(u8))
        mask_t = torch.from_numpy(mask).unsqueeze(0)
        sample = Sample(image, image * mask_t, mask_t, stem=f"synth_{i:05d}")
        samples.append(_validate_sample(sample))
    return DatasetPair(samples, samples)
