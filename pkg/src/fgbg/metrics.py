"""Evaluation protocols: inception-style scores, diversity, style relevance.

All metrics run over a pluggable embedder interface: a classifier-mode
embedder maps an image batch to class probabilities, a feature-mode embedder
maps it to a list of feature tensors (taps). The shipped embedders are small,
seeded, random-weight conv nets so nothing here requires pretrained weights;
real classifier/feature backbones plug in behind the same callables.

Reductions across images use exact summation (math.fsum), so scores are
invariant to image order wherever that holds mathematically (single-split
scores, per-group scores, and means over groups).

The style relevance score is a stand-in formulation (cosine similarity of
channel-statistics vectors between paired foreground and background regions);
reports label it as such.
"""

from __future__ import annotations

import logging
import math
from math import fsum

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .exceptions import EmbedderError
from .generators import _init_module

logger = logging.getLogger(__name__)

STYLE_RELEVANCE_NOTE = "stand-in channel-statistics cosine formulation"


def _class_probs(images: torch.Tensor, classifier) -> np.ndarray:
    """Run a classifier-mode embedder and validate its probability contract."""
    with torch.no_grad():
        probs = classifier(images)
    probs = np.asarray(probs.detach().cpu().numpy() if isinstance(probs, torch.Tensor) else probs)
    probs = probs.astype(np.float64)
    if probs.ndim != 2 or probs.shape[0] != images.shape[0]:
        raise EmbedderError(f"classifier returned shape {probs.shape} for {images.shape[0]} images")
    if probs.min() < 0 or np.abs(probs.sum(axis=1) - 1.0).max() > 1e-5:
        raise EmbedderError("classifier output is not a probability distribution per image")
    return probs


def _feature_taps(images: torch.Tensor, embedder) -> list[np.ndarray]:
    try:
        with torch.no_grad():
            taps = embedder(images)
    except Exception as exc:
        raise EmbedderError(f"feature embedder failed: {exc}") from exc
    return [np.asarray(t.detach().cpu().numpy(), dtype=np.float64) for t in taps]


def _is_from_probs(probs: np.ndarray) -> float:
    """exp(mean KL(p(y|x) || p(y))) over one set of probability rows."""
    n, k = probs.shape
    p_y = np.array([fsum(probs[:, j]) / n for j in range(k)])
    kls = []
    for i in range(n):
        p = probs[i]
        nz = p > 0
        kls.append(float(np.sum(p[nz] * (np.log(p[nz]) - np.log(p_y[nz])))))
    mean_kl = max(fsum(kls) / n, 0.0)  # KL >= 0; clip float noise
    return math.exp(mean_kl)


def inception_score(images: torch.Tensor, classifier, splits: int = 10) -> tuple[float, float]:
    """Mean and std over splits of exp(mean KL(p(y|x) || p(y))).

    `splits=1` scores the whole set at once (and is exactly invariant to
    image order); with more splits the images are chunked in the given order.
    """
    if splits < 1:
        raise ValueError(f"splits must be >= 1, got {splits}")
    n = images.shape[0]
    if n < splits:
        raise ValueError(f"need at least {splits} images for {splits} splits, got {n}")
    probs = _class_probs(images, classifier)
    scores = []
    for chunk in np.array_split(np.arange(n), splits):
        scores.append(_is_from_probs(probs[chunk]))
    mean = fsum(scores) / len(scores)
    var = fsum((s - mean) ** 2 for s in scores) / len(scores)
    return mean, math.sqrt(var)


def _normalize_groups(grouped) -> list[torch.Tensor]:
    groups = []
    for g in grouped:
        t = g if isinstance(g, torch.Tensor) else (torch.stack(list(g)) if len(g) else None)
        if t is None or t.shape[0] == 0:
            raise ValueError("empty group")
        groups.append(t)
    return groups


def conditional_is(grouped, classifier) -> tuple[float, float]:
    """Score each fixed-condition group separately, then average over groups."""
    groups = _normalize_groups(grouped)
    if len(groups) < 2:
        raise ValueError(f"need at least 2 groups, got {len(groups)}")
    scores = [_is_from_probs(_class_probs(g, classifier)) for g in groups]
    mean = fsum(scores) / len(scores)
    var = fsum((s - mean) ** 2 for s in scores) / len(scores)
    return mean, math.sqrt(var)


def _pair_distance(taps_a: list[np.ndarray], taps_b: list[np.ndarray]) -> float:
    per_tap = [float(np.mean((a - b) ** 2)) for a, b in zip(taps_a, taps_b)]
    return fsum(per_tap) / len(per_tap)


def lpips_diversity(
    grouped, feature_embedder, pairs_per_group: int = 19, rng: torch.Generator | None = None
) -> float:
    """Mean feature-space distance over randomly sampled within-group pairs.

    Deterministic given the rng seed; every group must have at least 2 images.
    """
    groups = _normalize_groups(grouped)
    for g in groups:
        if g.shape[0] < 2:
            raise ValueError("every group needs at least 2 images to form pairs")
    if rng is None:
        rng = torch.Generator().manual_seed(0)
    distances = []
    for g in groups:
        taps = _feature_taps(g, feature_embedder)
        n = g.shape[0]
        for _ in range(pairs_per_group):
            i = int(torch.randint(0, n, (1,), generator=rng))
            j = int(torch.randint(0, n - 1, (1,), generator=rng))
            if j >= i:
                j += 1
            distances.append(
                _pair_distance([t[i] for t in taps], [t[j] for t in taps])
            )
    return fsum(distances) / len(distances)


def _support_weights(regions: torch.Tensor, shapes: list[tuple]) -> list[np.ndarray]:
    """Per-tap pixel weights from each region's support (its nonzero pixels).

    Region images are zero outside the region they carry, so channel
    statistics are taken over the region itself rather than the whole canvas.
    """
    support = (regions.abs().amax(dim=-3, keepdim=True) > 0).double()
    return [
        F.adaptive_avg_pool2d(support, (h, w)).numpy()[:, 0] for (h, w) in shapes
    ]


def _style_vector(taps: list[np.ndarray], weights: list[np.ndarray], index: int) -> np.ndarray:
    """Support-weighted per-channel mean/std of every tap, concatenated."""
    parts = []
    for tap, w_tap in zip(taps, weights):
        feat = tap[index].reshape(tap[index].shape[0], -1)  # [C, H*W]
        w = w_tap[index].reshape(-1)
        total = w.sum()
        if total == 0.0:
            return np.zeros(0)
        mean = feat @ w / total
        var = ((feat - mean[:, None]) ** 2) @ w / total
        parts.append(mean)
        parts.append(np.sqrt(var))
    return np.concatenate(parts)


def style_relevance(fg_regions: torch.Tensor, bg_regions: torch.Tensor, feature_embedder) -> float:
    """Mean cosine similarity between paired foreground and background styles.

    Pairs whose style vector has zero norm (or empty support) are excluded
    with a warning.
    """
    if fg_regions.shape[0] != bg_regions.shape[0]:
        raise ValueError(
            f"region counts differ: {fg_regions.shape[0]} vs {bg_regions.shape[0]}"
        )
    taps_fg = _feature_taps(fg_regions, feature_embedder)
    taps_bg = _feature_taps(bg_regions, feature_embedder)
    w_fg = _support_weights(fg_regions, [t.shape[-2:] for t in taps_fg])
    w_bg = _support_weights(bg_regions, [t.shape[-2:] for t in taps_bg])
    sims = []
    for i in range(fg_regions.shape[0]):
        a = _style_vector(taps_fg, w_fg, i)
        b = _style_vector(taps_bg, w_bg, i)
        if a.size == 0 or b.size == 0:
            logger.warning("excluding pair %d: empty region support", i)
            continue
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            logger.warning("excluding pair %d: zero-norm style vector", i)
            continue
        sims.append(float(np.dot(a, b) / (na * nb)))
    if not sims:
        raise ValueError("no pairs with nonzero style vectors")
    return fsum(sims) / len(sims)


class IdentityFeatures:
    """Single-tap identity embedder: style statistics read raw pixel channels.

    The default backbone for the style relevance score, where deeper random
    features bury palette shifts below their own noise.
    """

    identifier = "identity-pixel-stats"

    def __call__(self, images: torch.Tensor) -> list[torch.Tensor]:
        return [images]


class RandomConvClassifier(nn.Module):
    """Seeded random-weight conv classifier; the shipped classifier-mode embedder."""

    def __init__(self, n_classes: int = 10, seed: int = 0, width: int = 16):
        super().__init__()
        self.conv1 = nn.Conv2d(3, width, 4, stride=2, padding=1)
        self.conv2 = nn.Conv2d(width, width * 2, 4, stride=2, padding=1)
        self.conv3 = nn.Conv2d(width * 2, width * 4, 4, stride=2, padding=1)
        self.linear = nn.Linear(width * 4, n_classes)
        _init_module(self, torch.Generator().manual_seed(seed), std=0.3)
        self.requires_grad_(False)
        self.identifier = f"random-conv-classifier:seed={seed}:classes={n_classes}"

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = F.leaky_relu(self.conv1(images), 0.2)
        x = F.leaky_relu(self.conv2(x), 0.2)
        x = F.leaky_relu(self.conv3(x), 0.2)
        logits = self.linear(x.mean(dim=(-2, -1)))
        return torch.softmax(logits, dim=-1)


class RandomConvFeatures(nn.Module):
    """Seeded random-weight conv feature net; the shipped feature-mode embedder.

    The init scale keeps tap magnitudes well below 1 so that losses built on
    these features are not dominated by finite-batch sampling noise.
    """

    def __init__(self, seed: int = 0, width: int = 16, init_std: float = 0.1):
        super().__init__()
        self.conv1 = nn.Conv2d(3, width, 4, stride=2, padding=1)
        self.conv2 = nn.Conv2d(width, width * 2, 4, stride=2, padding=1)
        self.conv3 = nn.Conv2d(width * 2, width * 4, 4, stride=2, padding=1)
        _init_module(self, torch.Generator().manual_seed(seed), std=init_std)
        self.requires_grad_(False)
        self.identifier = f"random-conv-features:seed={seed}"

    def forward(self, images: torch.Tensor) -> list[torch.Tensor]:
        t1 = F.leaky_relu(self.conv1(images), 0.2)
        t2 = F.leaky_relu(self.conv2(t1), 0.2)
        t3 = F.leaky_relu(self.conv3(t2), 0.2)
        return [t1, t2, t3]
