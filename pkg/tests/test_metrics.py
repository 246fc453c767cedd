import math

import numpy as np
import pytest
import torch

from fgbg.core import new_rng
from fgbg.exceptions import EmbedderError
from fgbg.metrics import (
    RandomConvClassifier,
    RandomConvFeatures,
    conditional_is,
    inception_score,
    lpips_diversity,
    style_relevance,
)


class IndexClassifier:
    """Reads a class row from a fixed table, keyed by the image's corner pixel."""

    identifier = "index-table-classifier"

    def __init__(self, table: np.ndarray):
        self.table = torch.as_tensor(table, dtype=torch.float64)

    def __call__(self, images: torch.Tensor) -> torch.Tensor:
        k = self.table.shape[0]
        idx = ((images[:, 0, 0, 0] + 1.0) / 2.0 * (k - 1)).round().long()
        return self.table[idx]


def indexed_images(n: int, k: int, res: int = 8) -> torch.Tensor:
    """Images whose corner pixel encodes their table row (n rows cycling over k)."""
    imgs = torch.zeros(n, 3, res, res)
    for i in range(n):
        imgs[i, 0, 0, 0] = (i % k) / (k - 1) * 2.0 - 1.0
    return imgs


def identity_tap(images):
    return [images]


class TestInceptionScore:
    def test_identical_predictions_give_one(self):
        table = np.tile([[0.2, 0.3, 0.5]], (8, 1))
        imgs = indexed_images(8, 8)
        classifier = IndexClassifier(np.tile([[0.2, 0.3, 0.5]], (8, 1)))
        mean, std = inception_score(imgs, classifier, splits=2)
        assert mean == pytest.approx(1.0, abs=1e-6)
        assert std == pytest.approx(0.0, abs=1e-6)

    def test_perfect_one_hot_gives_class_count(self):
        k = 5
        imgs = indexed_images(k, k)
        classifier = IndexClassifier(np.eye(k))
        mean, _ = inception_score(imgs, classifier, splits=1)
        assert mean == pytest.approx(k, rel=1e-9)

    def test_matches_straight_line_recomputation(self):
        g = np.random.default_rng(0)
        table = g.random((12, 4))
        table /= table.sum(axis=1, keepdims=True)
        imgs = indexed_images(12, 12)
        mean, _ = inception_score(imgs, IndexClassifier(table), splits=1)
        p_y = table.mean(axis=0)
        kl = (table * (np.log(table) - np.log(p_y))).sum(axis=1).mean()
        assert mean == pytest.approx(math.exp(kl), rel=1e-9)

    def test_order_invariant_at_single_split(self):
        g = np.random.default_rng(1)
        table = g.random((10, 6))
        table /= table.sum(axis=1, keepdims=True)
        imgs = indexed_images(10, 10)
        base, _ = inception_score(imgs, IndexClassifier(table), splits=1)
        perm = torch.randperm(10, generator=new_rng(2))
        permuted, _ = inception_score(imgs[perm], IndexClassifier(table), splits=1)
        assert base == permuted  # exact: compensated summation

    def test_score_at_least_one(self):
        g = np.random.default_rng(3)
        table = g.random((16, 3))
        table /= table.sum(axis=1, keepdims=True)
        mean, _ = inception_score(indexed_images(16, 16), IndexClassifier(table), splits=4)
        assert mean >= 1.0

    def test_too_few_images(self):
        with pytest.raises(ValueError):
            inception_score(indexed_images(3, 3), IndexClassifier(np.eye(3)), splits=4)

    def test_invalid_probabilities_rejected(self):
        bad = IndexClassifier(np.ones((4, 3)))  # rows sum to 3
        with pytest.raises(EmbedderError):
            inception_score(indexed_images(4, 4), bad, splits=1)

    def test_shipped_classifier_on_duplicates(self):
        classifier = RandomConvClassifier(n_classes=10, seed=0)
        img = torch.rand(1, 3, 32, 32, generator=new_rng(5)) * 2 - 1
        imgs = img.expand(16, -1, -1, -1)
        mean, _ = inception_score(imgs, classifier, splits=4)
        assert mean == pytest.approx(1.0, abs=1e-6)


class TestConditionalIS:
    def test_constant_groups_give_one(self):
        classifier = RandomConvClassifier(n_classes=6, seed=1)
        img = torch.rand(1, 3, 32, 32, generator=new_rng(6)) * 2 - 1
        groups = [img.expand(8, -1, -1, -1), (img * 0.5).expand(8, -1, -1, -1)]
        mean, std = conditional_is(groups, classifier)
        assert mean == pytest.approx(1.0, abs=1e-6)
        assert std == pytest.approx(0.0, abs=1e-6)

    def test_one_hot_groups_give_class_count(self):
        k = 4
        groups = [indexed_images(k, k), indexed_images(k, k)]
        mean, _ = conditional_is(groups, IndexClassifier(np.eye(k)))
        assert mean == pytest.approx(k, rel=1e-9)

    def test_group_order_invariant(self):
        g = np.random.default_rng(7)
        table = g.random((8, 5))
        table /= table.sum(axis=1, keepdims=True)
        classifier = IndexClassifier(table)
        groups = [indexed_images(8, 8), indexed_images(4, 8), indexed_images(6, 8)]
        a, _ = conditional_is(groups, classifier)
        b, _ = conditional_is(groups[::-1], classifier)
        assert a == b

    def test_needs_two_groups(self):
        with pytest.raises(ValueError):
            conditional_is([indexed_images(4, 4)], IndexClassifier(np.eye(4)))

    def test_empty_group_rejected(self):
        with pytest.raises(ValueError):
            conditional_is([indexed_images(4, 4), torch.zeros(0, 3, 8, 8)],
                           IndexClassifier(np.eye(4)))


class TestLpipsDiversity:
    def test_identical_images_give_zero(self):
        img = torch.rand(1, 3, 8, 8, generator=new_rng(8))
        groups = [img.expand(5, -1, -1, -1), img.expand(3, -1, -1, -1)]
        assert lpips_diversity(groups, identity_tap, rng=new_rng(0)) == 0.0

    def test_two_image_group_hand_oracle(self):
        g = torch.Generator().manual_seed(9)
        a = torch.rand(3, 8, 8, generator=g)
        b = torch.rand(3, 8, 8, generator=g)
        groups = [torch.stack([a, b])]
        value = lpips_diversity(groups, identity_tap, pairs_per_group=7, rng=new_rng(1))
        expected = float(((a - b) ** 2).mean())
        assert value == pytest.approx(expected, rel=1e-6)

    def test_deterministic_given_seed(self):
        g = torch.Generator().manual_seed(10)
        groups = [torch.rand(6, 3, 8, 8, generator=g) for _ in range(3)]
        a = lpips_diversity(groups, identity_tap, rng=new_rng(2))
        b = lpips_diversity(groups, identity_tap, rng=new_rng(2))
        assert a == b

    def test_single_image_group_rejected(self):
        with pytest.raises(ValueError):
            lpips_diversity([torch.rand(1, 3, 8, 8)], identity_tap, rng=new_rng(3))

    def test_shipped_embedder_runs(self):
        g = torch.Generator().manual_seed(11)
        groups = [torch.rand(4, 3, 32, 32, generator=g) * 2 - 1 for _ in range(2)]
        value = lpips_diversity(groups, RandomConvFeatures(seed=2), rng=new_rng(4))
        assert value > 0.0


class TestStyleRelevance:
    def test_identical_pairs_give_one(self):
        g = torch.Generator().manual_seed(12)
        regions = torch.rand(4, 3, 8, 8, generator=g)
        assert style_relevance(regions, regions.clone(), identity_tap) == (
            pytest.approx(1.0, abs=1e-9)
        )

    def test_orthogonal_style_vectors_give_zero(self):
        # constant channels: style vector = (channel means, zero stds)
        fg = torch.zeros(1, 3, 8, 8)
        bg = torch.zeros(1, 3, 8, 8)
        fg[:, 0] = 0.7  # style vector along channel-0 mean
        bg[:, 1] = 0.4  # style vector along channel-1 mean
        assert style_relevance(fg, bg, identity_tap) == pytest.approx(0.0, abs=1e-12)

    def test_empty_support_pairs_excluded(self, caplog):
        fg = torch.zeros(2, 3, 8, 8)
        bg = torch.zeros(2, 3, 8, 8)
        fg[0, 0] = 1.0
        bg[0, 0] = 1.0
        with caplog.at_level("WARNING"):
            value = style_relevance(fg, bg, identity_tap)
        assert value == pytest.approx(1.0)
        assert "excluding pair 1" in caplog.text

    def test_count_mismatch(self):
        with pytest.raises(ValueError):
            style_relevance(torch.rand(2, 3, 8, 8), torch.rand(3, 3, 8, 8), identity_tap)

    def test_value_in_range(self):
        g = torch.Generator().manual_seed(13)
        fg = torch.rand(8, 3, 16, 16, generator=g) * 2 - 1
        bg = torch.rand(8, 3, 16, 16, generator=g) * 2 - 1
        value = style_relevance(fg, bg, RandomConvFeatures(seed=3))
        assert -1.0 <= value <= 1.0

    def test_statistics_taken_over_region_support_only(self):
        # two regions with identical content on disjoint supports score 1.0;
        # whole-canvas statistics would dilute each by a different zero area
        fg = torch.zeros(1, 3, 8, 8)
        bg = torch.zeros(1, 3, 8, 8)
        fg[:, :, :, :4] = 0.5   # left half
        bg[:, :, :2, :] = 0.5   # top quarter
        assert style_relevance(fg, bg, identity_tap) == pytest.approx(1.0, abs=1e-9)


class TestIdentityFeatures:
    def test_single_identity_tap(self):
        from fgbg.metrics import IdentityFeatures

        emb = IdentityFeatures()
        imgs = torch.rand(2, 3, 8, 8)
        taps = emb(imgs)
        assert len(taps) == 1
        assert taps[0] is imgs
        assert "identity" in emb.identifier


class TestShippedEmbedders:
    def test_classifier_outputs_probabilities(self):
        classifier = RandomConvClassifier(n_classes=7, seed=4)
        imgs = torch.rand(5, 3, 32, 32, generator=new_rng(14)) * 2 - 1
        probs = classifier(imgs)
        assert probs.shape == (5, 7)
        assert (probs >= 0).all()
        assert torch.allclose(probs.sum(dim=1), torch.ones(5), atol=1e-6)

    def test_embedders_deterministic_per_seed(self):
        imgs = torch.rand(2, 3, 32, 32, generator=new_rng(15)) * 2 - 1
        a = RandomConvFeatures(seed=5)(imgs)
        b = RandomConvFeatures(seed=5)(imgs)
        c = RandomConvFeatures(seed=6)(imgs)
        assert all(torch.equal(x, y) for x, y in zip(a, b))
        assert not torch.equal(a[0], c[0])

    def test_feature_net_exposes_three_taps(self):
        taps = RandomConvFeatures(seed=7)(torch.zeros(1, 3, 32, 32))
        assert len(taps) == 3
