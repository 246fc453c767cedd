import pytest
import torch

from fgbg.core import new_rng
from fgbg.discriminators import KINDS, DiscriminatorSet
from fgbg.losses import adv_loss_discriminator, imgseg_adv_loss_discriminator


@pytest.fixture
def discs():
    return DiscriminatorSet(resolution=32, base_width=8, init_rng=new_rng(0))


def rand_image(seed, n=None, ch=3, res=32):
    g = torch.Generator().manual_seed(seed)
    shape = (ch, res, res) if n is None else (n, ch, res, res)
    return torch.rand(shape, generator=g) * 2 - 1


class TestScoreSample:
    def test_deterministic(self, discs):
        img = rand_image(0)
        a = discs.score_sample("image", img)
        b = discs.score_sample("image", img)
        assert torch.equal(a.score, b.score)

    @pytest.mark.parametrize("kind", KINDS)
    def test_score_strictly_interior(self, discs, kind):
        ch = 1 if kind == "shape" else 3
        res = discs.patch_size if kind == "background" else 32
        for seed, scale in ((1, 1.0), (2, 1e6)):
            x = rand_image(seed, ch=ch, res=res) * scale
            with torch.no_grad():
                score = float(discs.score_sample(kind, x).score)
            assert 0.0 < score < 1.0

    def test_unknown_kind(self, discs):
        with pytest.raises(ValueError):
            discs.score_sample("texture", rand_image(3))

    def test_kind_input_mismatch(self, discs):
        with pytest.raises(ValueError):
            discs.score_sample("shape", rand_image(4, ch=3))
        with pytest.raises(ValueError):
            discs.score_sample("image", rand_image(5, ch=1))

    def test_feature_list_stable(self, discs):
        feats1 = discs.score_sample("foreground", rand_image(6)).features
        feats2 = discs.score_sample("foreground", rand_image(7)).features
        assert len(feats1) == len(feats2) == len(discs.foreground.blocks)
        assert [f.shape for f in feats1] == [f.shape for f in feats2]

    def test_only_foreground_returns_features(self, discs):
        assert discs.score_sample("image", rand_image(8)).features == []

    def test_zero_input_score_near_half_at_init(self):
        for seed in range(3):
            discs = DiscriminatorSet(resolution=32, base_width=8, init_rng=new_rng(seed))
            with torch.no_grad():
                for kind in KINDS:
                    ch = 1 if kind == "shape" else 3
                    res = discs.patch_size if kind == "background" else 32
                    score = float(discs.score_sample(kind, torch.zeros(ch, res, res)).score)
                    assert 0.3 < score < 0.7
                score = float(
                    discs.score_image_seg(torch.zeros(3, 32, 32), torch.zeros(1, 32, 32)).score
                )
                assert 0.3 < score < 0.7


class TestScoreImageSeg:
    def test_deterministic(self, discs):
        img, mask = rand_image(9), torch.rand(1, 32, 32)
        a = discs.score_image_seg(img, mask)
        b = discs.score_image_seg(img, mask)
        assert torch.equal(a.score, b.score)

    def test_score_interior(self, discs):
        with torch.no_grad():
            score = float(discs.score_image_seg(rand_image(10), torch.rand(1, 32, 32)).score)
        assert 0.0 < score < 1.0

    def test_spatial_mismatch(self, discs):
        with pytest.raises(ValueError):
            discs.score_image_seg(rand_image(11), torch.rand(1, 16, 16))


class TestOverfitSeparation:
    def test_real_fake_gap_after_training(self):
        discs = DiscriminatorSet(resolution=32, base_width=8, init_rng=new_rng(1))
        real = rand_image(12, n=8).clamp(-1, 1) * 0.3  # muted real distribution
        fake = rand_image(13, n=8)
        opt = torch.optim.Adam(discs.image.parameters(), lr=1e-3)
        for _ in range(200):
            loss = adv_loss_discriminator(
                discs.score_sample("image", real).score,
                discs.score_sample("image", fake).score,
            )
            opt.zero_grad()
            loss.backward()
            opt.step()
        with torch.no_grad():
            gap = float(
                discs.score_sample("image", real).score.mean()
                - discs.score_sample("image", fake).score.mean()
            )
        assert gap > 0.2

    def test_matching_awareness_after_training(self):
        # two samples; the discriminator must separate matched from swapped pairs
        discs = DiscriminatorSet(resolution=32, base_width=8, init_rng=new_rng(2))
        g = torch.Generator().manual_seed(14)
        images = torch.rand(2, 3, 32, 32, generator=g) * 2 - 1
        masks = (torch.rand(2, 1, 32, 32, generator=g) > 0.5).float()
        swapped = torch.roll(masks, 1, dims=0)
        opt = torch.optim.Adam(discs.image_seg.parameters(), lr=1e-3)
        for _ in range(200):
            loss = imgseg_adv_loss_discriminator(
                discs.score_image_seg(images, masks).score,
                discs.score_image_seg(images, swapped).score,
                discs.score_image_seg(images, swapped).score,
            )
            opt.zero_grad()
            loss.backward()
            opt.step()
        with torch.no_grad():
            matched = discs.score_image_seg(images, masks).score
            mismatched = discs.score_image_seg(images, swapped).score
        assert float(matched.mean()) - float(mismatched.mean()) > 0.2
