"""Schedule, optimizer behavior, checkpointing, determinism, param counts."""

import math

import numpy as np
import pytest
import torch

from mattekit import dataio, training
from mattekit.errors import ConfigError, NumericError
from mattekit.model import ModelConfig, build_model
from mattekit.model.blocks import gn_groups
from mattekit.model.config import STAGE_BLOCKS
from mattekit.training import (
    TrainConfig, build_training_example, evaluate_model, load_checkpoint,
    lr_schedule, param_count, save_checkpoint, train,
)

MICRO = ModelConfig(guidance_mode="click", width_multiplier=0.0625)


def tiny_scene_set(n=4, size=64, seed=0):
    return dataio.generate_dataset(n, seed=seed,
                                   spec=dataio.SceneSpec(height=size, width=size))


class TestLrSchedule:
    CFG = TrainConfig()

    def test_endpoints_exact(self):
        assert lr_schedule(0, 1000, self.CFG) == 1e-4
        assert lr_schedule(1000, 1000, self.CFG) == 1e-7

    def test_midpoint(self):
        assert lr_schedule(500, 1000, self.CFG) == pytest.approx(5.005e-5, rel=1e-12)

    def test_monotone_non_increasing(self):
        values = [lr_schedule(s, 200, self.CFG) for s in range(201)]
        assert all(b <= a for a, b in zip(values, values[1:]))

    def test_zero_total_steps_rejected(self):
        with pytest.raises(ConfigError):
            lr_schedule(0, 0, self.CFG)
        with pytest.raises(ConfigError):
            lr_schedule(5, 4, self.CFG)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)
        with pytest.raises(ConfigError):
            TrainConfig(lr_init=1e-7, lr_final=1e-4)


class TestOptimizerContract:
    def test_zero_grad_zero_decay_is_noop(self):
        model = build_model(MICRO, seed=0)
        before = {n: p.detach().clone() for n, p in model.named_parameters()}
        opt = torch.optim.AdamW(model.parameters(), lr=1e-3, betas=(0.5, 0.999),
                                weight_decay=0.0)
        for p in model.parameters():
            p.grad = torch.zeros_like(p)
        opt.step()
        for n, p in model.named_parameters():
            assert torch.equal(p, before[n]), n


class TestTrainLoop:
    def test_one_epoch_bookkeeping_and_reload(self, tmp_path):
        scenes = tiny_scene_set(4)
        cfg = TrainConfig(epochs=1, batch_size=2, seed=3, crop_size=64, threads=1)
        result = train(MICRO, cfg, scenes, out_dir=str(tmp_path), log_fn=None)
        assert len(result.history) == 1
        assert result.checkpoint_path is not None

        model, payload = load_checkpoint(result.checkpoint_path)
        assert payload["version"] == training.CHECKPOINT_VERSION
        assert ModelConfig.from_dict(payload["model_config"]) == MICRO
        torch.manual_seed(0)
        image = torch.rand(1, 3, 64, 64)
        guide = torch.rand(1, 3, 64, 64)
        with torch.no_grad():
            a = result.model(image, guide).alpha_p
            b = model(image, guide).alpha_p
        assert torch.equal(a, b)

    def test_two_runs_same_seed_bit_identical(self):
        scenes = tiny_scene_set(6)
        cfg = TrainConfig(epochs=2, batch_size=2, seed=11, crop_size=64, threads=1)
        r1 = train(MICRO, cfg, scenes, log_fn=None)
        r2 = train(MICRO, cfg, scenes, log_fn=None)
        s1 = r1.model.state_dict()
        s2 = r2.model.state_dict()
        assert set(s1) == set(s2)
        for key in s1:
            assert torch.equal(s1[key], s2[key]), key

    def test_nonfinite_loss_aborts_with_batch_record(self, tmp_path, monkeypatch):
        scenes = tiny_scene_set(2)
        cfg = TrainConfig(epochs=1, batch_size=2, seed=0, crop_size=64, threads=1)

        real_build = training.build_model

        def poisoned(model_cfg, seed=None):
            model = real_build(model_cfg, seed=seed)
            with torch.no_grad():
                model.decoder.final[-1].weight.fill_(float("nan"))
            return model

        monkeypatch.setattr(training, "build_model", poisoned)
        with pytest.raises(NumericError, match="epoch 0 batch 0"):
            train(MICRO, cfg, scenes, out_dir=str(tmp_path), log_fn=None)
        assert (tmp_path / "failed_batch.txt").exists()

    def test_trimap_and_none_modes_train_one_epoch(self):
        scenes = tiny_scene_set(3, seed=8)
        for mode in ("trimap", "none"):
            cfg = ModelConfig(guidance_mode=mode, width_multiplier=0.0625)
            tcfg = TrainConfig(epochs=1, batch_size=3, seed=2, crop_size=64, threads=1)
            result = train(cfg, tcfg, scenes, log_fn=None)
            assert len(result.history) == 1
            assert np.isfinite(result.history[0]["total"])

    def test_log_line_format(self, tmp_path):
        scenes = tiny_scene_set(3)
        lines = []
        cfg = TrainConfig(epochs=2, batch_size=3, seed=5, crop_size=64, threads=1)
        train(MICRO, cfg, scenes, out_dir=str(tmp_path), log_fn=lines.append)
        assert len(lines) == 2
        fields = lines[0].split(",")
        assert len(fields) == 7  # epoch, l_s, l_d, l_m, total, val_mse, lr
        (tmp_path / "train_log.csv").read_text().startswith("epoch,")


class TestBuildExample:
    def test_click_example_guides_match_target(self):
        scenes = tiny_scene_set(1, seed=4)
        cfg = TrainConfig(epochs=1)
        rng = np.random.default_rng(0)
        image, guide, target, trimap = build_training_example(scenes[0], "click", rng, cfg)
        assert guide.mode == "click"
        assert guide.raster[..., 0].any()
        ys, xs = np.nonzero(guide.raster[..., 0])
        # disk centers lie on the instance; sampled pixels stay close to it
        assert target[int(np.mean(ys)), int(np.mean(xs))] > 0.25

    def test_trimap_example_guidance_is_target_trimap(self):
        scenes = tiny_scene_set(1, seed=5)
        rng = np.random.default_rng(1)
        image, guide, target, trimap = build_training_example(
            scenes[0], "trimap", rng, TrainConfig(epochs=1))
        assert guide.mode == "trimap"
        assert np.array_equal(np.argmax(guide.raster, axis=-1), trimap)

    def test_none_example_zero_guidance(self):
        scenes = tiny_scene_set(1, seed=6)
        rng = np.random.default_rng(2)
        _, guide, target, _ = build_training_example(scenes[0], "none", rng,
                                                     TrainConfig(epochs=1))
        assert not guide.raster.any()
        assert np.array_equal(target, scenes[0].alpha)


# ---------------------------------------------------------------------------
# parameter counting
# ---------------------------------------------------------------------------

def conv_params(cin, cout, k, bias=True):
    return cout * cin * k * k + (cout if bias else 0)


def gn_params(c):
    return 2 * c


def bottleneck_params(cin, cmid, cout, downsample):
    n = conv_params(cin, cmid, 1) + gn_params(cmid)
    n += conv_params(cmid, cmid, 3) + gn_params(cmid)
    n += conv_params(cmid, cout, 1) + gn_params(cout)
    if downsample:
        n += conv_params(cin, cout, 1) + gn_params(cout)
    return n


def analytic_param_count(cfg: ModelConfig) -> int:
    """Layer-by-layer hand summation of the architecture, kept independent
    of the torch modules."""
    s1, s2, s3 = cfg.stem_channels
    stages = cfg.stage_channels
    cc = cfg.context_channels
    d8, d4, d2, dfin = cfg.decoder_channels
    n_aux = cfg.aux_out_channels

    total = conv_params(6, s1, 3) + gn_params(s1)
    total += conv_params(s1, s2, 3) + gn_params(s2)
    total += conv_params(s2, s3, 3) + gn_params(s3)
    cin = s3
    for cout, blocks in zip(stages, STAGE_BLOCKS):
        cmid = cout // 4
        for b in range(blocks):
            total += bottleneck_params(cin if b == 0 else cout, cmid, cout,
                                       downsample=(b == 0))
            # first block always differs in channels (or stride) here
        cin = cout
    total += conv_params(stages[3], cc, 1) + gn_params(cc)      # compression
    total += conv_params(cc, cc, 3) + gn_params(cc) + conv_params(cc, n_aux, 3)

    c1, c2, c3, _ = stages
    if cfg.nca == 0:
        total += conv_params(cc + c2, cc, 1)
    else:
        if cfg.use_gem:
            total += conv_params(3, cc, 1) + conv_params(cc, cc, 1)
        goa = laa = 0
        if cfg.goa_variant != "off":
            goa = 4 * conv_params(cc, cc, 1)
            if cfg.goa_variant == "object_semantics":
                goa += conv_params(cc + c3, cc, 1)
        if cfg.laa_variant != "off":
            laa = conv_params(cc + c2, cc, 1) + 4 * conv_params(cc, cc, 1)
            if cfg.laa_variant == "hybrid":
                laa += 2 * conv_params(cc, cc, 3) + conv_params(cc, cc, 1)
        else:
            total += conv_params(cc + c2, cc, 1)                # 1/16 -> 1/8 fusion
        rounds = cfg.nca
        total += rounds * (goa + laa)
    total += conv_params(cc, n_aux, 3)                          # cascade aux head

    total += conv_params(cc + c3, d8, 1) + gn_params(d8)
    total += 2 * (2 * conv_params(d8, d8, 3) + 2 * gn_params(d8))
    total += conv_params(d8 + c1, d4, 1) + gn_params(d4)
    total += 2 * (2 * conv_params(d4, d4, 3) + 2 * gn_params(d4))
    total += conv_params(d4 + s3, d2, 3) + gn_params(d2)
    total += conv_params(d2, dfin, 3) + gn_params(dfin) + conv_params(dfin, n_aux, 3)
    total += conv_params(d2 + 3, dfin, 3) + conv_params(dfin, 1, 3)
    return total


class TestParamCount:
    def test_single_conv_count(self):
        conv = torch.nn.Conv2d(4, 8, 1)
        assert sum(p.numel() for p in conv.parameters()) == 40

    def test_matches_layerwise_hand_summation(self):
        for cfg in (
            MICRO,
            ModelConfig(guidance_mode="trimap", width_multiplier=0.25),
            ModelConfig(guidance_mode="click", width_multiplier=0.25, nca=0,
                        use_gem=False, goa_variant="off", laa_variant="off"),
            ModelConfig(guidance_mode="none", width_multiplier=0.25, nca=1),
        ):
            assert param_count(cfg) == analytic_param_count(cfg), cfg

    def test_full_config_near_reference_size(self):
        count = param_count(ModelConfig(guidance_mode="trimap", width_multiplier=1.0))
        assert abs(count - 45.6e6) <= 0.2 * 45.6e6

    def test_nca0_smaller_than_nca2(self):
        base = ModelConfig(guidance_mode="click", width_multiplier=0.25, nca=0,
                           use_gem=False, goa_variant="off", laa_variant="off")
        full = ModelConfig(guidance_mode="click", width_multiplier=0.25, nca=2)
        assert param_count(base) < param_count(full)


class TestEvaluateModel:
    def test_click_eval_reports_iou(self):
        scenes = tiny_scene_set(2, seed=9)
        model = build_model(MICRO, seed=0)
        out = evaluate_model(model, scenes, "click", seed=1)
        assert set(out) >= {"mse", "mad", "iou", "iou_mean"}
        assert len(out["iou"]) == 2

    def test_eval_deterministic(self):
        scenes = tiny_scene_set(2, seed=10)
        model = build_model(MICRO, seed=0)
        a = evaluate_model(model, scenes, "click", seed=2)
        b = evaluate_model(model, scenes, "click", seed=2)
        assert a["mse"] == b["mse"]
