"""Guidance embedding, global/local aggregators, and the cascade wiring.

The attention oracles here are deliberately naive: explicit python loops
over token pairs with max-subtracted softmax, fed by the modules' own conv
weights pulled out as numpy matrices.
"""

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from mattekit.errors import ResolutionError
from mattekit.model import (
    Backbone, ContextAggregationNetwork, GlobalObjectAggregator,
    GuidanceEmbedding, LocalAppearanceAggregator, ModelConfig,
)

MICRO = ModelConfig(guidance_mode="click", width_multiplier=0.0625)


def conv_matrices(conv):
    """1x1 conv as (weight matrix, bias) numpy pair."""
    w = conv.weight.detach().numpy()[:, :, 0, 0]
    b = conv.bias.detach().numpy()
    return w, b


def np_softmax_rows(m):
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def zero_module(m):
    with torch.no_grad():
        for p in m.parameters():
            p.zero_()


# ---------------------------------------------------------------------------
# guidance embedding
# ---------------------------------------------------------------------------

class TestGuidanceEmbedding:
    def test_zero_mlp_is_identity(self):
        torch.manual_seed(0)
        gem = GuidanceEmbedding(8)
        zero_module(gem)
        fc = torch.randn(1, 8, 4, 4)
        out = gem(torch.rand(1, 3, 64, 64), fc)
        assert torch.equal(out, fc)

    def test_zero_raster_with_zero_bias_is_identity(self):
        torch.manual_seed(1)
        gem = GuidanceEmbedding(8)
        with torch.no_grad():
            gem.fc1.bias.zero_()
            gem.fc2.bias.zero_()
        fc = torch.randn(1, 8, 4, 4)
        out = gem(torch.zeros(1, 3, 64, 64), fc)
        assert torch.allclose(out, fc)

    def test_matches_hand_computed_mlp(self):
        gem = GuidanceEmbedding(2, hidden=2)
        with torch.no_grad():
            gem.fc1.weight.copy_(torch.tensor([[1.0, -2.0, 0.5], [0.0, 1.0, 1.0]]).reshape(2, 3, 1, 1))
            gem.fc1.bias.copy_(torch.tensor([0.1, -0.2]))
            gem.fc2.weight.copy_(torch.tensor([[2.0, -1.0], [0.5, 3.0]]).reshape(2, 2, 1, 1))
            gem.fc2.bias.copy_(torch.tensor([0.0, 0.25]))
        g = torch.tensor([0.6, 0.3, 0.9]).reshape(1, 3, 1, 1)
        fc = torch.tensor([1.0, -1.0]).reshape(1, 2, 1, 1)
        out = gem(g, fc)

        h = np.maximum(np.array([1.0, -2.0, 0.5]) @ [0.6, 0.3, 0.9] + 0.1, 0), \
            np.maximum(np.array([0.0, 1.0, 1.0]) @ [0.6, 0.3, 0.9] - 0.2, 0)
        h = np.array(h)
        expected = np.array([1.0, -1.0]) + np.array([[2.0, -1.0], [0.5, 3.0]]) @ h + [0.0, 0.25]
        assert np.allclose(out.detach().numpy().reshape(2), expected, atol=1e-6)


# ---------------------------------------------------------------------------
# global object aggregator
# ---------------------------------------------------------------------------

class TestGlobalObjectAggregator:
    def test_single_token_attention_is_one(self):
        torch.manual_seed(2)
        goa = GlobalObjectAggregator(4, 4)
        f_obj = torch.randn(1, 4, 1, 1)
        f_sem = torch.randn(1, 4, 1, 1)
        out, attn = goa(f_obj, f_sem, return_attention=True)
        assert torch.allclose(attn, torch.ones(1, 1, 1))
        # with A=[[1]], the attention residual equals V itself
        f_os = f_obj + goa.fuse(torch.cat([f_obj, f_sem], dim=1))
        v = goa.v(f_os)
        f_iobj = f_obj + v
        assert torch.allclose(out, f_iobj + goa.out(f_iobj), atol=1e-6)

    def test_zero_query_gives_uniform_attention(self):
        torch.manual_seed(3)
        goa = GlobalObjectAggregator(4, 4)
        with torch.no_grad():
            goa.q.weight.zero_()
            goa.q.bias.zero_()
        f_obj = torch.randn(1, 4, 3, 3)
        out, attn = goa(f_obj, torch.randn(1, 4, 3, 3), return_attention=True)
        assert torch.allclose(attn, torch.full((1, 9, 9), 1 / 9), atol=1e-6)
        assert torch.isfinite(out).all()

    def test_matches_naive_loop_oracle_2x2(self):
        torch.manual_seed(4)
        goa = GlobalObjectAggregator(3, 5).double()
        f_obj = torch.randn(1, 3, 2, 2, dtype=torch.float64)
        f_sem = torch.randn(1, 5, 2, 2, dtype=torch.float64)
        out, attn = goa(f_obj, f_sem, return_attention=True)

        wf, bf = conv_matrices(goa.fuse)
        wq, bq = conv_matrices(goa.q)
        wk, bk = conv_matrices(goa.k)
        wv, bv = conv_matrices(goa.v)
        wo, bo = conv_matrices(goa.out)
        obj = f_obj.numpy()[0].reshape(3, 4).T      # tokens x channels
        sem = f_sem.numpy()[0].reshape(5, 4).T
        f_os = obj + np.concatenate([obj, sem], axis=1) @ wf.T + bf
        q = f_os @ wq.T + bq
        k = f_os @ wk.T + bk
        v = f_os @ wv.T + bv
        scores = np.empty((4, 4))
        for i in range(4):
            for j in range(4):
                scores[i, j] = float(q[i] @ k[j])
        attn_oracle = np_softmax_rows(scores)
        r = attn_oracle @ v
        f_iobj = obj + r
        expected = f_iobj + f_iobj @ wo.T + bo

        assert np.allclose(attn.detach().numpy()[0], attn_oracle, atol=1e-10)
        assert np.allclose(out.detach().numpy()[0].reshape(3, 4).T, expected, atol=1e-10)

    def test_attention_rows_sum_to_one(self):
        torch.manual_seed(5)
        goa = GlobalObjectAggregator(8, 8)
        _, attn = goa(torch.randn(2, 8, 4, 4) * 3, torch.randn(2, 8, 4, 4),
                      return_attention=True)
        assert torch.allclose(attn.sum(dim=-1), torch.ones(2, 16), atol=1e-6)
        assert (attn >= 0).all()

    def test_token_cap_raises_resolution_error(self):
        goa = GlobalObjectAggregator(4, 4, token_cap=16)
        with pytest.raises(ResolutionError, match="downscale"):
            goa(torch.randn(1, 4, 5, 5), torch.randn(1, 4, 5, 5))

    def test_object_variant_skips_semantic_fusion(self):
        goa = GlobalObjectAggregator(4, 4, variant="object")
        assert not hasattr(goa, "fuse")
        out = goa(torch.randn(1, 4, 2, 2))
        assert out.shape == (1, 4, 2, 2)

    def test_zeroed_out_conv_keeps_intermediate(self):
        torch.manual_seed(6)
        goa = GlobalObjectAggregator(4, 4)
        with torch.no_grad():
            goa.out.weight.zero_()
            goa.out.bias.zero_()
        f_obj = torch.randn(1, 4, 2, 2)
        f_sem = torch.randn(1, 4, 2, 2)
        out, attn = goa(f_obj, f_sem, return_attention=True)
        f_os = f_obj + goa.fuse(torch.cat([f_obj, f_sem], dim=1))
        v = goa.v(f_os).reshape(1, 4, 4).transpose(1, 2)
        f_iobj = f_obj + (attn @ v).transpose(1, 2).reshape(1, 4, 2, 2)
        assert torch.allclose(out, f_iobj, atol=1e-6)


# ---------------------------------------------------------------------------
# local appearance aggregator
# ---------------------------------------------------------------------------

class TestLocalAppearanceAggregator:
    def test_single_window_equals_full_map_attention(self):
        torch.manual_seed(7)
        s = 5
        laa = LocalAppearanceAggregator(4, 4, window=s, variant="transformer").double()
        f_in = torch.randn(1, 4, s, s, dtype=torch.float64)
        f_skip = torch.randn(1, 4, s, s, dtype=torch.float64)
        out, attn = laa(f_in, f_skip, return_attention=True)
        assert attn.shape == (1, s * s, s * s)

        f_la = f_in + laa.fuse(torch.cat([f_in, f_skip], dim=1))
        q = laa.q(f_la).reshape(1, 4, -1).transpose(1, 2)
        k = laa.k(f_la).reshape(1, 4, -1).transpose(1, 2)
        v = laa.v(f_la).reshape(1, 4, -1).transpose(1, 2)
        full_attn = torch.softmax(q @ k.transpose(-2, -1), dim=-1)
        r_low = (full_attn @ v).transpose(1, 2).reshape(1, 4, s, s)
        f_ila = f_la + r_low
        assert torch.allclose(out, f_ila + laa.out(f_ila), atol=1e-10)

    def test_zero_query_gives_window_value_means(self):
        torch.manual_seed(8)
        laa = LocalAppearanceAggregator(4, 4, window=2, variant="transformer")
        with torch.no_grad():
            laa.q.weight.zero_()
            laa.q.bias.zero_()
        f_in = torch.randn(1, 4, 4, 4)
        out, attn = laa(f_in, torch.randn(1, 4, 4, 4), return_attention=True)
        assert torch.allclose(attn, torch.full_like(attn, 0.25), atol=1e-6)

    def test_matches_window_loop_oracle_14x14(self):
        torch.manual_seed(9)
        s = 7
        laa = LocalAppearanceAggregator(3, 4, window=s, variant="transformer").double()
        f_in = torch.randn(1, 3, 14, 14, dtype=torch.float64)
        f_skip = torch.randn(1, 4, 14, 14, dtype=torch.float64)
        out, attn = laa(f_in, f_skip, return_attention=True)
        assert attn.shape[0] == 4  # 2x2 windows

        wf, bf = conv_matrices(laa.fuse)
        wq, bq = conv_matrices(laa.q)
        wk, bk = conv_matrices(laa.k)
        wv, bv = conv_matrices(laa.v)
        wo, bo = conv_matrices(laa.out)
        x = f_in.numpy()[0]
        skip = f_skip.numpy()[0]
        cat = np.concatenate([x, skip], axis=0).reshape(7, -1).T  # pixels x channels
        f_la = x.reshape(3, -1).T + cat @ wf.T + bf               # (196, 3)
        f_la_img = f_la.T.reshape(3, 14, 14)

        r_low = np.zeros_like(f_la_img)
        for wy in range(2):
            for wx in range(2):
                win = f_la_img[:, wy * s:(wy + 1) * s, wx * s:(wx + 1) * s]
                tokens = win.reshape(3, -1).T                     # (49, 3)
                q = tokens @ wq.T + bq
                k = tokens @ wk.T + bk
                v = tokens @ wv.T + bv
                scores = np.empty((49, 49))
                for i in range(49):
                    for j in range(49):
                        scores[i, j] = float(q[i] @ k[j])
                r = np_softmax_rows(scores) @ v
                r_low[:, wy * s:(wy + 1) * s, wx * s:(wx + 1) * s] = r.T.reshape(3, s, s)

        f_ila = f_la_img + r_low
        flat = f_ila.reshape(3, -1).T
        expected = (flat + flat @ wo.T + bo).T.reshape(3, 14, 14)
        assert np.allclose(out.detach().numpy()[0], expected, atol=1e-10)

    def test_hybrid_adds_cnn_path(self):
        torch.manual_seed(10)
        hybrid = LocalAppearanceAggregator(4, 4, window=2, variant="hybrid")
        assert hasattr(hybrid, "cnn")
        trans = LocalAppearanceAggregator(4, 4, window=2, variant="transformer")
        assert not hasattr(trans, "cnn")
        n_hybrid = sum(p.numel() for p in hybrid.parameters())
        n_trans = sum(p.numel() for p in trans.parameters())
        assert n_hybrid > n_trans

    def test_padding_crop_preserves_shape(self):
        torch.manual_seed(11)
        laa = LocalAppearanceAggregator(4, 4, window=7)
        out = laa(torch.randn(1, 4, 10, 13), torch.randn(1, 4, 10, 13))
        assert out.shape == (1, 4, 10, 13)


class TestWindowHelpers:
    def test_partition_merge_roundtrip(self):
        from mattekit.model.blocks import window_merge, window_partition
        torch.manual_seed(12)
        x = torch.randn(2, 5, 12, 9)
        tokens = window_partition(x, 3)
        assert tokens.shape == (2 * 4 * 3, 9, 5)
        back = window_merge(tokens, 3, 2, 12, 9)
        assert torch.equal(back, x)


# ---------------------------------------------------------------------------
# cascade
# ---------------------------------------------------------------------------

def feature_pack(cfg, hw=64, seed=0):
    torch.manual_seed(seed)
    net = Backbone(cfg)
    with torch.no_grad():
        pack, _ = net(torch.randn(1, 6, hw, hw))
    return pack


class TestCascade:
    def test_nca0_has_no_attention_parameters(self):
        cfg = ModelConfig(guidance_mode="click", width_multiplier=0.0625, nca=0,
                          use_gem=False, goa_variant="off", laa_variant="off")
        net = ContextAggregationNetwork(cfg)
        names = [n for n, _ in net.named_parameters()]
        assert not any("goa" in n or "laa" in n or "gem" in n for n in names)
        full = ContextAggregationNetwork(MICRO)
        assert (sum(p.numel() for p in full.parameters())
                > sum(p.numel() for p in net.parameters()))

    def test_full_ablation_config_structure(self):
        # the strongest ablation row: GEM + object-semantics + hybrid, twice
        cfg = ModelConfig(guidance_mode="click", width_multiplier=0.0625, nca=2,
                          use_gem=True, goa_variant="object_semantics", laa_variant="hybrid")
        net = ContextAggregationNetwork(cfg)
        assert hasattr(net, "gem") and hasattr(net, "goa1") and hasattr(net, "goa2")
        assert hasattr(net, "laa1") and hasattr(net, "laa2")
        assert net.goa1.variant == "object_semantics"
        assert net.laa1.variant == "hybrid" and hasattr(net.laa1, "cnn")

    def test_output_resolution_and_aux(self):
        cfg = MICRO
        pack = feature_pack(cfg)
        net = ContextAggregationNetwork(cfg)
        guidance = torch.rand(1, 3, 64, 64)
        refined, aux = net(pack, guidance)
        assert refined.shape[-2:] == pack.f2.shape[-2:]
        assert refined.shape[1] == cfg.context_channels
        assert aux.shape[1] == 3 and aux.shape[-2:] == pack.f2.shape[-2:]

    def test_nca1_zeroed_aggregators_reduce_to_gem_path(self):
        cfg = ModelConfig(guidance_mode="click", width_multiplier=0.0625, nca=1)
        pack = feature_pack(cfg, seed=3)
        torch.manual_seed(13)
        net = ContextAggregationNetwork(cfg)
        zero_module(net.goa1)
        zero_module(net.laa1)
        guidance = torch.rand(1, 3, 64, 64)
        refined, _ = net(pack, guidance)
        gem_out = net.gem(guidance, pack.fc)
        expected = F.interpolate(gem_out, size=pack.f2.shape[-2:],
                                 mode="bilinear", align_corners=False)
        assert torch.allclose(refined, expected, atol=1e-6)

    def test_goa_only_and_laa_only_variants_run(self):
        pack_cfg = ModelConfig(guidance_mode="click", width_multiplier=0.0625, nca=2,
                               laa_variant="off")
        pack = feature_pack(pack_cfg, seed=4)
        net = ContextAggregationNetwork(pack_cfg)
        refined, _ = net(pack, torch.rand(1, 3, 64, 64))
        assert refined.shape[-2:] == pack.f2.shape[-2:]

        cfg2 = ModelConfig(guidance_mode="click", width_multiplier=0.0625, nca=2,
                           goa_variant="off")
        net2 = ContextAggregationNetwork(cfg2)
        refined2, _ = net2(pack, torch.rand(1, 3, 64, 64))
        assert refined2.shape[-2:] == pack.f2.shape[-2:]

    def test_outputs_finite_for_wild_inputs(self):
        cfg = MICRO
        pack = feature_pack(cfg, seed=5)
        net = ContextAggregationNetwork(cfg)
        for t in vars(pack).values():
            t.mul_(50.0)
        refined, aux = net(pack, torch.rand(1, 3, 64, 64))
        assert torch.isfinite(refined).all() and torch.isfinite(aux).all()
