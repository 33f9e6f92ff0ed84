"""Full matting network and the numpy-facing inference helper."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .. import guidance as guidance_mod
from ..errors import ContractError
from .aggregation import ContextAggregationNetwork
from .backbone import Backbone
from .blocks import init_weights
from .config import ModelConfig
from .decoder import Decoder


@dataclass
class MattePrediction:
    """Final alpha plus the three auxiliary maps used by the loss."""

    alpha_p: torch.Tensor  # (B, 1, H, W) in [0, 1]
    p_m: torch.Tensor      # (B, n_aux, H/2, W/2)
    p_d: torch.Tensor      # (B, n_aux, H/8, W/8)
    p_s: torch.Tensor      # (B, n_aux, H/16, W/16)


class MattingNetwork(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(cfg)
        self.aggregator = ContextAggregationNetwork(cfg)
        self.decoder = Decoder(cfg)

    def forward(self, image: torch.Tensor, guidance: torch.Tensor) -> MattePrediction:
        if image.shape[-2:] != guidance.shape[-2:]:
            raise ContractError("image and guidance raster must share spatial dims")
        pack, p_s = self.backbone(torch.cat([image, guidance], dim=1))
        refined, p_d = self.aggregator(pack, guidance)
        alpha_p, p_m = self.decoder(pack, refined, image)
        return MattePrediction(alpha_p=alpha_p, p_m=p_m, p_d=p_d, p_s=p_s)


def build_model(cfg: ModelConfig, seed: int | None = None) -> MattingNetwork:
    if seed is not None:
        torch.manual_seed(seed)
    model = MattingNetwork(cfg)
    init_weights(model)
    return model


def _to_tensor_chw(arr: np.ndarray, device) -> torch.Tensor:
    t = torch.from_numpy(np.ascontiguousarray(arr)).float()
    if t.ndim == 2:
        t = t[None]
    else:
        t = t.permute(2, 0, 1)
    return t[None].to(device)


def pad_to_multiple(arr: np.ndarray, multiple: int = 32) -> tuple[np.ndarray, tuple[int, int]]:
    """Reflect-pad bottom/right so both sides divide ``multiple``."""
    h, w = arr.shape[:2]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph == 0 and pw == 0:
        return arr, (0, 0)
    pads = ((0, ph), (0, pw)) + ((0, 0),) * (arr.ndim - 2)
    return np.pad(arr, pads, mode="reflect"), (ph, pw)


def predict_alpha(
    model: MattingNetwork,
    image: np.ndarray,
    guide: guidance_mod.Guidance,
    device: str = "cpu",
    known_region_passthrough: bool | None = None,
    trimap: np.ndarray | None = None,
) -> np.ndarray:
    """Run inference on one HxWx3 image in [0, 1]; returns an HxW alpha.

    Sides not divisible by 32 are reflect-padded and cropped back.  In trimap
    mode the pass-through flag (default on) copies the trimap's certain
    labels into the output, so the network only fills the unknown band.
    """
    h, w = image.shape[:2]
    if guide.raster.shape[:2] != (h, w):
        raise ContractError("guidance raster size does not match the image")
    img_p, _ = pad_to_multiple(image)
    gui_p, _ = pad_to_multiple(guide.raster)
    model.eval()
    with torch.no_grad():
        pred = model(_to_tensor_chw(img_p, device), _to_tensor_chw(gui_p, device))
    alpha = pred.alpha_p[0, 0].cpu().numpy()[:h, :w].astype(np.float64)

    if known_region_passthrough is None:
        known_region_passthrough = model.cfg.guidance_mode == "trimap"
    if known_region_passthrough and trimap is not None:
        alpha = alpha.copy()
        alpha[trimap == guidance_mod.FG] = 1.0
        alpha[trimap == guidance_mod.BG] = 0.0
    return alpha
