import time

import pytest
import torch

from fgbg import RunConfig, build_train_state, make_synthetic_dataset, train_step
from fgbg.data import sample_batch


def small_config(**overrides) -> RunConfig:
    """A slimmed config for fast unit tests."""
    base = dict(
        resolution=32,
        d_z=16,
        base_channels=32,
        min_channels=8,
        modifier_channels=16,
        d_channels=8,
        batch_size=4,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture
def cfg() -> RunConfig:
    return small_config()


@pytest.fixture
def rng() -> torch.Generator:
    return torch.Generator().manual_seed(0)


@pytest.fixture(scope="session")
def overfit_run():
    """The acceptance overfit run: 8 synthetic samples, 2000 steps at 32x32.

    Trained once per session and shared by every test that needs a trained
    checkpoint; returns the final state, the per-step loss log, the dataset,
    and the wall-clock training time in seconds.
    """
    cfg = RunConfig()  # the documented defaults are the acceptance recipe
    dataset = make_synthetic_dataset(8, cfg.resolution, cfg.seed)
    state = build_train_state(cfg)
    rows = []
    start = time.monotonic()
    for _ in range(2000):
        batch, _ = sample_batch(dataset.foreground_set, cfg.batch_size, state.rng)
        state, bundle = train_step(state, batch)
        rows.append(bundle.to_dict())
    elapsed = time.monotonic() - start
    return state, rows, dataset, elapsed
