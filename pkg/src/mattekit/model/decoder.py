"""Matting decoder: hierarchical fusion of refined context features with
skip features, predicting an auxiliary map at 1/2 and the final alpha."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ContractError
from .backbone import FeaturePack
from .blocks import ConvGNReLU, ResBlock3x3, conv3x3, linear_conv
from .config import ModelConfig


def _up_to(x: torch.Tensor, ref_hw) -> torch.Tensor:
    return F.interpolate(x, size=tuple(ref_hw), mode="bilinear", align_corners=False)


class Decoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d8, d4, d2, dfin = cfg.decoder_channels
        s3 = cfg.stem_channels[-1]
        c1, _, c3, _ = cfg.stage_channels
        cc = cfg.context_channels

        self.compress8 = ConvGNReLU(cc + c3, d8, kernel=1)
        self.refine8 = nn.Sequential(ResBlock3x3(d8), ResBlock3x3(d8))
        self.compress4 = ConvGNReLU(d8 + c1, d4, kernel=1)
        self.refine4 = nn.Sequential(ResBlock3x3(d4), ResBlock3x3(d4))
        self.fuse2 = ConvGNReLU(d4 + s3, d2)
        self.pm_head = nn.Sequential(ConvGNReLU(d2, dfin), linear_conv(dfin, cfg.aux_out_channels, kernel=3))
        self.final = nn.Sequential(
            conv3x3(d2 + 3, dfin), nn.ReLU(inplace=True),
            linear_conv(dfin, 1, kernel=3),
        )

    def forward(self, pack: FeaturePack, refined: torch.Tensor,
                image: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (alpha_p at full resolution, p_m at 1/2 resolution)."""
        if refined.shape[-2:] != pack.f2.shape[-2:]:
            raise ContractError(
                f"refined features {tuple(refined.shape[-2:])} must match f2 "
                f"{tuple(pack.f2.shape[-2:])}"
            )
        x = self.compress8(torch.cat([refined, _up_to(pack.f3, refined.shape[-2:])], dim=1))
        x = self.refine8(x)
        x = _up_to(x, pack.f1.shape[-2:])
        x = self.compress4(torch.cat([x, pack.f1], dim=1))
        x = self.refine4(x)
        x = _up_to(x, pack.stem_feat.shape[-2:])
        matte_feat = self.fuse2(torch.cat([x, pack.stem_feat], dim=1))

        p_m = self.pm_head(matte_feat)
        if self.cfg.guidance_mode == "trimap":
            p_m = p_m.clamp(0.0, 1.0)

        up = _up_to(matte_feat, image.shape[-2:])
        alpha = self.final(torch.cat([up, image], dim=1)).clamp(0.0, 1.0)
        return alpha, p_m
