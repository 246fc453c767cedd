"""Compositional image synthesis with independent foregrounds and backgrounds.

Foreground objects and background scenes are generated from separate latent
codes, style-aligned through shared feature statistics, geometrically
reconciled by a background modifier, and blended through a binary mask. The
package ships the full training loop, evaluation protocols, and a CLI.
"""

from .composer import ForegroundTransform, compose, generate_composite, transform_foreground
from .config import RunConfig, load_config
from .core import new_rng, sample_latent
from .data import DatasetPair, Sample, load_dataset, make_synthetic_dataset
from .discriminators import DiscriminatorSet
from .generators import GeneratorSet, adain, soft_adain
from .losses import LossBundle, total_loss
from .modifier import BackgroundModifier, binarize_mask, extract_compatible_background
from .trainer import TrainState, build_train_state, load_checkpoint, save_checkpoint, train, train_step

__version__ = "0.1.0"

__all__ = [
    "BackgroundModifier",
    "DatasetPair",
    "DiscriminatorSet",
    "ForegroundTransform",
    "GeneratorSet",
    "LossBundle",
    "RunConfig",
    "Sample",
    "TrainState",
    "adain",
    "binarize_mask",
    "build_train_state",
    "compose",
    "extract_compatible_background",
    "generate_composite",
    "load_checkpoint",
    "load_config",
    "load_dataset",
    "make_synthetic_dataset",
    "new_rng",
    "sample_latent",
    "save_checkpoint",
    "soft_adain",
    "total_loss",
    "train",
    "train_step",
    "transform_foreground",
]
