import json

import pytest
import torch

from fgbg.data import make_synthetic_dataset, sample_batch
from fgbg.exceptions import CheckpointError, NonFiniteLossError
from fgbg.trainer import (
    CHECKPOINT_FORMAT_VERSION,
    build_train_state,
    load_checkpoint,
    save_checkpoint,
    train,
    train_step,
)

from conftest import small_config


@pytest.fixture
def dataset():
    return make_synthetic_dataset(4, 32, seed=0)


def snapshot(module):
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


def changed(before, module):
    after = module.state_dict()
    return any(not torch.equal(before[k], after[k]) for k in before)


class TestTrainStep:
    def test_gradient_reaches_every_module(self, dataset):
        state = build_train_state(small_config())
        gens_groups = {
            "s_gen": state.gens.s_gen,
            "fg_gen": state.gens.fg_gen,
            "bg_gen": state.gens.bg_gen,
            "to_image": state.gens.to_image,
            "modifier": state.modifier,
        }
        disc_groups = {
            name: getattr(state.discs, name)
            for name in ("shape", "foreground", "background", "image", "image_seg")
        }
        before = {k: snapshot(m) for k, m in (gens_groups | disc_groups).items()}
        batch, _ = sample_batch(dataset.foreground_set, 4, state.rng)
        train_step(state, batch)
        for name, module in (gens_groups | disc_groups).items():
            assert changed(before[name], module), f"{name} did not move"

    def test_geometry_ablation_freezes_modifier(self, dataset):
        state = build_train_state(small_config(geometry_alignment_enabled=False))
        before = snapshot(state.modifier)
        batch, _ = sample_batch(dataset.foreground_set, 4, state.rng)
        _, bundle = train_step(state, batch)
        assert not changed(before, state.modifier)
        assert bundle.fg_shape == 0.0
        assert bundle.attn_bg == 0.0

    def test_optimizers_own_disjoint_parameter_sets(self):
        state = build_train_state(small_config())
        g_params = {id(p) for group in state.opt_g.param_groups for p in group["params"]}
        d_params = {id(p) for group in state.opt_d.param_groups for p in group["params"]}
        assert g_params.isdisjoint(d_params)
        all_params = {id(p) for p in state.gens.parameters()}
        all_params |= {id(p) for p in state.modifier.parameters()}
        all_params |= {id(p) for p in state.discs.parameters()}
        assert g_params | d_params == all_params

    def test_empty_batch_rejected(self):
        state = build_train_state(small_config())
        with pytest.raises(ValueError):
            train_step(state, [])

    def test_shared_layer_identity_after_steps(self, dataset):
        state = build_train_state(small_config())
        for _ in range(3):
            batch, _ = sample_batch(dataset.foreground_set, 4, state.rng)
            train_step(state, batch)
        names = [k for k in state.gens.state_dict() if "to_image" in k]
        assert names == ["to_image.weight", "to_image.bias"]
        # both image paths run through the same conv object
        z = torch.randn(2, state.cfg.d_z, generator=state.rng)
        _, feats = state.gens.generate_background(z)
        mask = state.gens.generate_shape(z)
        fg = state.gens.generate_foreground(z, mask, feats, 0.0)
        assert torch.isfinite(fg).all()

    def test_non_finite_loss_aborts_with_term_name(self, dataset, monkeypatch):
        state = build_train_state(small_config())
        monkeypatch.setattr(
            "fgbg.trainer.fg_shape_loss", lambda *a, **k: torch.tensor(float("nan"))
        )
        batch, _ = sample_batch(dataset.foreground_set, 4, state.rng)
        with pytest.raises(NonFiniteLossError, match="fg_shape"):
            train_step(state, batch)

    def test_cross_dataset_batches_accepted(self, dataset):
        other = make_synthetic_dataset(4, 32, seed=9)
        state = build_train_state(small_config())
        batch, _ = sample_batch(dataset.foreground_set, 4, state.rng)
        bg_batch, _ = sample_batch(other.foreground_set, 4, state.rng)
        _, bundle = train_step(state, batch, bg_batch)
        assert bundle.total > 0

    def test_higher_resolution_config_switch(self):
        cfg = small_config(resolution=64, batch_size=2)
        state = build_train_state(cfg)
        dataset = make_synthetic_dataset(2, 64, seed=0)
        batch, _ = sample_batch(dataset.foreground_set, 2, state.rng)
        _, bundle = train_step(state, batch)
        assert all(
            isinstance(v, float) for v in bundle.to_dict().values()
        )
        assert len(state.discs.image.blocks) == 4  # full patch stack at 64px


class TestTrain:
    def test_log_row_count_matches_steps(self, dataset, tmp_path):
        state, rows = train(small_config(), dataset, steps=5, out_dir=tmp_path)
        assert len(rows) == 5
        lines = (tmp_path / "train_log.jsonl").read_text().strip().splitlines()
        assert len(lines) == 5
        assert json.loads(lines[-1])["step"] == 5

    def test_two_runs_same_seed_identical(self, dataset):
        _, rows1 = train(small_config(), dataset, steps=4)
        _, rows2 = train(small_config(), dataset, steps=4)
        assert rows1 == rows2

    def test_different_seeds_differ(self, dataset):
        _, rows1 = train(small_config(seed=0), dataset, steps=3)
        _, rows2 = train(small_config(seed=1), dataset, steps=3)
        assert rows1 != rows2

    def test_resume_reproduces_next_step_exactly(self, dataset, tmp_path):
        cfg = small_config(checkpoint_every=3)
        _, rows_full = train(cfg, dataset, steps=5, out_dir=tmp_path / "full")
        resumed_state, rows_resumed = train(
            cfg,
            dataset,
            steps=5,
            out_dir=tmp_path / "resumed",
            resume_from=tmp_path / "full" / "checkpoint_step3.pt",
        )
        assert rows_resumed[0] == rows_full[3]
        assert rows_resumed[1] == rows_full[4]
        assert resumed_state.step == 5

    def test_checkpoints_written_at_interval_and_end(self, dataset, tmp_path):
        train(small_config(checkpoint_every=2), dataset, steps=5, out_dir=tmp_path)
        assert (tmp_path / "checkpoint_step2.pt").is_file()
        assert (tmp_path / "checkpoint_step4.pt").is_file()
        assert (tmp_path / "checkpoint_step5.pt").is_file()
        assert (tmp_path / "checkpoint_last.pt").is_file()


class TestCheckpointFormat:
    def test_round_trip_preserves_everything(self, dataset, tmp_path):
        state, _ = train(small_config(), dataset, steps=2)
        path = tmp_path / "ckpt.pt"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        assert loaded.step == state.step
        for k, v in state.gens.state_dict().items():
            assert torch.equal(loaded.gens.state_dict()[k], v)
        assert torch.equal(loaded.rng.get_state(), state.rng.get_state())
        assert loaded.cfg == state.cfg

    def test_manifest_describes_all_tensors(self, tmp_path):
        state = build_train_state(small_config())
        path = tmp_path / "ckpt.pt"
        save_checkpoint(state, path)
        payload = torch.load(path, weights_only=False)
        assert payload["format_version"] == CHECKPOINT_FORMAT_VERSION
        manifest = payload["tensor_manifest"]
        entry = manifest["gens.to_image.weight"]
        assert entry["shape"] == list(state.gens.to_image.weight.shape)
        assert "float32" in entry["dtype"]
        # shared layer stored once under its canonical name
        shared = [k for k in manifest if "to_image" in k]
        assert shared == ["gens.to_image.weight", "gens.to_image.bias"]

    def test_unsupported_version_rejected(self, tmp_path):
        state = build_train_state(small_config())
        path = tmp_path / "ckpt.pt"
        save_checkpoint(state, path)
        payload = torch.load(path, weights_only=False)
        payload["format_version"] = 99
        torch.save(payload, path)
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "missing.pt")
