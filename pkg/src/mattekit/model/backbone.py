"""Semantic backbone: deep stem, group-norm residual stages, atrous final
stage, and a 1x1 compression into compact context features.

Stride ladder for an H x W input (H, W divisible by 32):

    stem   H/2    three 3x3 convs, first strided
    f1     H/4    residual stage 1
    f2     H/8    residual stage 2 (appearance features)
    f3     H/16   residual stage 3 (semantic features)
    f4     H/16   residual stage 4, dilation 2, no downsampling
    fc     H/16   1x1-compressed context features

An auxiliary head on fc predicts a coarse trimap (3-channel logits) for
click / no guidance, or a coarse alpha (1 channel, clamped) for trimap
guidance.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from ..errors import NumericError, ShapeError
from .blocks import ConvGNReLU, ResidualStage, linear_conv
from .config import STAGE_BLOCKS, ModelConfig


@dataclass
class FeaturePack:
    stem_feat: torch.Tensor  # 1/2
    f1: torch.Tensor         # 1/4
    f2: torch.Tensor         # 1/8
    f3: torch.Tensor         # 1/16
    fc: torch.Tensor         # 1/16, compressed context


class Backbone(nn.Module):
    IN_CHANNELS = 6  # image(3) + guidance raster(3)

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        s1, s2, s3 = cfg.stem_channels
        c1, c2, c3, c4 = cfg.stage_channels
        self.stem = nn.Sequential(
            ConvGNReLU(self.IN_CHANNELS, s1, stride=2),
            ConvGNReLU(s1, s2),
            ConvGNReLU(s2, s3),
        )
        self.stage1 = ResidualStage(s3, c1 // 4, c1, STAGE_BLOCKS[0], stride=2)
        self.stage2 = ResidualStage(c1, c2 // 4, c2, STAGE_BLOCKS[1], stride=2)
        self.stage3 = ResidualStage(c2, c3 // 4, c3, STAGE_BLOCKS[2], stride=2)
        # atrous stage: keeps 1/16 resolution, dilation widens the receptive field
        self.stage4 = ResidualStage(c3, c4 // 4, c4, STAGE_BLOCKS[3], stride=1, dilation=2)
        self.compress = ConvGNReLU(c4, cfg.context_channels, kernel=1)
        cc = cfg.context_channels
        self.aux_head = nn.Sequential(
            ConvGNReLU(cc, cc),
            linear_conv(cc, cfg.aux_out_channels, kernel=3),
        )

    def forward(self, x: torch.Tensor) -> tuple[FeaturePack, torch.Tensor]:
        h, w = x.shape[-2:]
        if h % 32 or w % 32:
            raise ShapeError(f"input spatial size must be divisible by 32, got {h}x{w}")
        stem = self.stem(x)
        f1 = self.stage1(stem)
        f2 = self.stage2(f1)
        f3 = self.stage3(f2)
        f4 = self.stage4(f3)
        fc = self.compress(f4)
        if not torch.isfinite(fc).all():
            raise NumericError("non-finite activations in backbone context features")
        aux = self.aux_head(fc)
        if self.cfg.guidance_mode == "trimap":
            aux = aux.clamp(0.0, 1.0)
        return FeaturePack(stem_feat=stem, f1=f1, f2=f2, f3=f3, fc=fc), aux
