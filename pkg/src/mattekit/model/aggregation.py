"""Context aggregation: guidance embedding, global object attention over all
positions, and windowed local appearance attention with a parallel conv path.

The aggregators follow a residual pattern throughout: attention and conv
branches produce residuals that are added onto their inputs, so zeroing a
branch's weights makes it an exact identity.  Attention maps use a plain
rowwise softmax of Q K^T with no 1/sqrt(d) scaling.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ResolutionError
from .backbone import FeaturePack
from .blocks import conv3x3, linear_conv, rowwise_attention, window_merge, window_partition
from .config import ModelConfig


def _flatten_tokens(x: torch.Tensor) -> torch.Tensor:
    b, c, h, w = x.shape
    return x.reshape(b, c, h * w).transpose(1, 2)  # (B, N, C)


def _unflatten_tokens(t: torch.Tensor, h: int, w: int) -> torch.Tensor:
    b, n, c = t.shape
    return t.transpose(1, 2).reshape(b, c, h, w)


class GuidanceEmbedding(nn.Module):
    """Project the guidance raster pixelwise and add it to context features."""

    def __init__(self, context_channels: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or context_channels
        self.fc1 = nn.Conv2d(3, hidden, 1)
        self.fc2 = linear_conv(hidden, context_channels)

    def forward(self, guidance: torch.Tensor, fc: torch.Tensor) -> torch.Tensor:
        g = F.interpolate(guidance, size=fc.shape[-2:], mode="nearest")
        return fc + self.fc2(F.relu(self.fc1(g)))


class GlobalObjectAggregator(nn.Module):
    """Full-map attention refining object features, optionally fused with
    semantic features from a shallower stage first."""

    def __init__(self, channels: int, sem_channels: int, variant: str = "object_semantics",
                 token_cap: int = 4096):
        super().__init__()
        assert variant in ("object", "object_semantics")
        self.variant = variant
        self.token_cap = token_cap
        if variant == "object_semantics":
            self.fuse = linear_conv(channels + sem_channels, channels)
        self.q = linear_conv(channels, channels)
        self.k = linear_conv(channels, channels)
        self.v = linear_conv(channels, channels)
        self.out = linear_conv(channels, channels)
        with torch.no_grad():
            # start near uniform attention: a benign mean-pooling residual
            # that the cascade can sharpen instead of having to untangle
            self.q.weight.mul_(0.1)

    def forward(self, f_obj: torch.Tensor, f_sem: torch.Tensor | None = None,
                return_attention: bool = False):
        b, c, h, w = f_obj.shape
        if h * w > self.token_cap:
            raise ResolutionError(
                f"{h * w} attention tokens exceed the cap {self.token_cap}; "
                "downscale the input before matting"
            )
        if self.variant == "object_semantics":
            if f_sem.shape[-2:] != f_obj.shape[-2:]:
                f_sem = F.interpolate(f_sem, size=f_obj.shape[-2:],
                                      mode="bilinear", align_corners=False)
            f_os = f_obj + self.fuse(torch.cat([f_obj, f_sem], dim=1))
        else:
            f_os = f_obj
        q = _flatten_tokens(self.q(f_os))
        k = _flatten_tokens(self.k(f_os))
        v = _flatten_tokens(self.v(f_os))
        attn = rowwise_attention(q, k)
        residual = _unflatten_tokens(attn @ v, h, w)
        f_iobj = f_obj + residual
        f_refined = f_iobj + self.out(f_iobj)
        if return_attention:
            return f_refined, attn
        return f_refined


class LocalAppearanceAggregator(nn.Module):
    """Non-overlapping s x s window attention (low-frequency path) with an
    optional small conv path (high-frequency path) in parallel."""

    def __init__(self, channels: int, skip_channels: int, window: int = 7,
                 variant: str = "hybrid"):
        super().__init__()
        assert variant in ("transformer", "hybrid")
        self.variant = variant
        self.window = window
        self.fuse = linear_conv(channels + skip_channels, channels)
        self.q = linear_conv(channels, channels)
        self.k = linear_conv(channels, channels)
        self.v = linear_conv(channels, channels)
        with torch.no_grad():
            self.q.weight.mul_(0.1)
        if variant == "hybrid":
            self.cnn = nn.Sequential(
                conv3x3(channels, channels), nn.ReLU(inplace=True),
                conv3x3(channels, channels), nn.ReLU(inplace=True),
                linear_conv(channels, channels),
            )
        self.out = linear_conv(channels, channels)

    def forward(self, f_in: torch.Tensor, f_skip: torch.Tensor,
                return_attention: bool = False):
        f_la = f_in + self.fuse(torch.cat([f_in, f_skip], dim=1))
        b, c, h, w = f_la.shape
        s = self.window
        pad_h = (s - h % s) % s
        pad_w = (s - w % s) % s
        padded = F.pad(f_la, (0, pad_w, 0, pad_h)) if (pad_h or pad_w) else f_la
        ph, pw = padded.shape[-2:]
        q = window_partition(self.q(padded), s)
        k = window_partition(self.k(padded), s)
        v = window_partition(self.v(padded), s)
        attn = rowwise_attention(q, k)
        r_low = window_merge(attn @ v, s, b, ph, pw)[..., :h, :w]
        f_ila = f_la + r_low
        if self.variant == "hybrid":
            f_ila = f_ila + self.cnn(f_la)
        f_refined = f_ila + self.out(f_ila)
        if return_attention:
            return f_refined, attn
        return f_refined


class ContextAggregationNetwork(nn.Module):
    """Cascade of aggregators refining the context features, with an
    auxiliary prediction head on the result.

    The first round runs global attention at 1/16 and moves to 1/8 through
    the local aggregator's input fusion; the second round repeats both at
    1/8 with bilinearly upsampled semantic features.  nca=0 degrades to a
    plain upsample-and-fuse with no attention parameters at all.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        cc = cfg.context_channels
        _, c2, c3, _ = cfg.stage_channels
        use_goa = cfg.nca >= 1 and cfg.goa_variant != "off"
        use_laa = cfg.nca >= 1 and cfg.laa_variant != "off"

        if cfg.nca >= 1:
            if cfg.use_gem:
                self.gem = GuidanceEmbedding(cc)
            if use_goa:
                self.goa1 = GlobalObjectAggregator(cc, c3, cfg.goa_variant,
                                                   cfg.attention_token_cap)
            if use_laa:
                self.laa1 = LocalAppearanceAggregator(cc, c2, cfg.window_s, cfg.laa_variant)
            else:
                self.down_fuse = linear_conv(cc + c2, cc)
            if cfg.nca == 2:
                if use_goa:
                    self.goa2 = GlobalObjectAggregator(cc, c3, cfg.goa_variant,
                                                       cfg.attention_token_cap)
                if use_laa:
                    self.laa2 = LocalAppearanceAggregator(cc, c2, cfg.window_s, cfg.laa_variant)
        else:
            self.fuse0 = linear_conv(cc + c2, cc)
        self.aux_head = linear_conv(cc, cfg.aux_out_channels, kernel=3)

    def _to_eighth(self, x: torch.Tensor, f2: torch.Tensor) -> torch.Tensor:
        return F.interpolate(x, size=f2.shape[-2:], mode="bilinear", align_corners=False)

    def forward(self, pack: FeaturePack, guidance: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        cfg = self.cfg
        if cfg.nca == 0:
            x = self.fuse0(torch.cat([self._to_eighth(pack.fc, pack.f2), pack.f2], dim=1))
        else:
            x = pack.fc
            if cfg.use_gem:
                x = self.gem(guidance, x)
            if hasattr(self, "goa1"):
                x = self.goa1(x, pack.f3)
            x = self._to_eighth(x, pack.f2)
            if hasattr(self, "laa1"):
                x = self.laa1(x, pack.f2)
            else:
                x = self.down_fuse(torch.cat([x, pack.f2], dim=1))
            if cfg.nca == 2:
                if hasattr(self, "goa2"):
                    x = self.goa2(x, pack.f3)
                if hasattr(self, "laa2"):
                    x = self.laa2(x, pack.f2)
        aux = self.aux_head(x)
        if cfg.guidance_mode == "trimap":
            aux = aux.clamp(0.0, 1.0)
        return x, aux
