"""Training losses over the three prediction sites plus the final alpha.

Two regimes, selected by the guidance mode:

    coarse (none / click): auxiliary targets are trimaps -> focal
        cross-entropy at every site, plus a Charbonnier penalty on the final
        alpha restricted to the trimap's unknown band.
    trimap: auxiliary targets are alphas -> Charbonnier over the unknown
        band at every site, plus a Laplacian pyramid term on the final alpha.

All functions are torch-differentiable; targets are aligned to a site's
resolution by nearest-neighbor downsampling.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError, ContractError, NumericError
from .model.config import ModelConfig
from .model.network import MattePrediction


class EmptyUnknownRegionWarning(UserWarning):
    """Charbonnier was asked for an empty unknown region; returned 0."""


@dataclass
class LossReport:
    l_s: torch.Tensor
    l_d: torch.Tensor
    l_m: torch.Tensor
    total: torch.Tensor
    regime: str
    empty_unknown: bool = False

    def to_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("l_s", "l_d", "l_m", "total")}


def focal_ce(logits: torch.Tensor, target: torch.Tensor, gamma: float = 2.0) -> torch.Tensor:
    """Mean focal cross-entropy: (1 - p_true)^gamma * (-log p_true)."""
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    if not torch.isfinite(logits).all():
        raise NumericError("non-finite logits passed to focal cross-entropy")
    if logits.shape[-2:] != target.shape[-2:]:
        raise ContractError(
            f"logits {tuple(logits.shape[-2:])} and target {tuple(target.shape[-2:])} misaligned"
        )
    logp = F.log_softmax(logits, dim=-3)
    logp_t = torch.gather(logp, -3, target.long().unsqueeze(-3)).squeeze(-3)
    p_t = logp_t.exp()
    return ((1.0 - p_t) ** gamma * -logp_t).mean()


def charbonnier_unknown(
    pred: torch.Tensor,
    gt: torch.Tensor,
    unknown_mask: torch.Tensor,
    epsilon: float = 1e-6,
) -> torch.Tensor:
    """Mean sqrt((pred-gt)^2 + eps^2) over the unknown region.

    An empty region yields 0 and an EmptyUnknownRegionWarning instead of a
    division by zero (automatic-matting batches can carry binary alphas).
    """
    if epsilon <= 0:
        raise ConfigError("epsilon must be > 0")
    mask = unknown_mask.to(pred.dtype)
    count = mask.sum()
    if count == 0:
        warnings.warn("empty unknown region; Charbonnier term is 0",
                      EmptyUnknownRegionWarning, stacklevel=2)
        return pred.sum() * 0.0
    dist = torch.sqrt((pred - gt) ** 2 + epsilon ** 2)
    return (dist * mask).sum() / count


def _binomial_kernel(dtype, device) -> torch.Tensor:
    k = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0], dtype=dtype, device=device) / 16.0
    return (k[:, None] * k[None, :])[None, None]


def _blur(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    # zero-pad, then scale up by the kernel mass lost outside the image;
    # valid down to 1x1 maps, unlike reflect padding which needs pad < dim
    num = F.conv2d(F.pad(x, (2, 2, 2, 2)), kernel)
    ones = torch.ones(1, 1, x.shape[-2], x.shape[-1], dtype=x.dtype, device=x.device)
    mass = F.conv2d(F.pad(ones, (2, 2, 2, 2)), kernel)
    return num * (kernel.sum() / mass)


def _pyr_down(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    return _blur(x, kernel)[..., ::2, ::2]


def _pyr_up(x: torch.Tensor, kernel: torch.Tensor, out_hw) -> torch.Tensor:
    b, c, h, w = x.shape
    stuffed = torch.zeros(b, c, h * 2, w * 2, dtype=x.dtype, device=x.device)
    stuffed[..., ::2, ::2] = x
    up = _blur(stuffed, kernel * 4.0)
    return up[..., :out_hw[0], :out_hw[1]]


def laplacian_pyramid(x: torch.Tensor, levels: int) -> list[torch.Tensor]:
    """Band-pass pyramid: level j is G_{j-1} minus the upsampled G_j."""
    if min(x.shape[-2:]) < 2 ** levels:
        raise ConfigError(
            f"spatial size {tuple(x.shape[-2:])} too small for {levels} pyramid levels"
        )
    kernel = _binomial_kernel(x.dtype, x.device)
    bands = []
    current = x
    for _ in range(levels):
        down = _pyr_down(current, kernel)
        bands.append(current - _pyr_up(down, kernel, current.shape[-2:]))
        current = down
    return bands


def laplacian_pyramid_loss(pred: torch.Tensor, gt: torch.Tensor, levels: int = 4) -> torch.Tensor:
    """Sum over levels of 2^j * mean |L_j(pred) - L_j(gt)|, j = 1..levels."""
    pred_bands = laplacian_pyramid(pred, levels)
    gt_bands = laplacian_pyramid(gt, levels)
    loss = pred.sum() * 0.0
    for j, (pb, gb) in enumerate(zip(pred_bands, gt_bands), start=1):
        loss = loss + (2.0 ** j) * (pb - gb).abs().mean()
    return loss


def _nearest_down(t: torch.Tensor, hw, is_label: bool) -> torch.Tensor:
    if t.shape[-2:] == tuple(hw):
        return t
    if is_label:
        out = F.interpolate(t.float().unsqueeze(1), size=tuple(hw), mode="nearest")
        return out.squeeze(1).long()
    return F.interpolate(t, size=tuple(hw), mode="nearest")


def total_loss(
    pred: MattePrediction,
    gt_alpha: torch.Tensor,
    gt_trimap: torch.Tensor,
    cfg: ModelConfig,
) -> LossReport:
    """Combine site losses per the active guidance regime.

    gt_alpha is (B, 1, H, W) at full resolution, gt_trimap (B, H, W) with
    labels {0 bg, 1 unknown, 2 fg}.
    """
    regime = "trimap" if cfg.guidance_mode == "trimap" else "coarse"
    expected_aux = 1 if regime == "trimap" else 3
    if pred.p_s.shape[-3] != expected_aux:
        raise ContractError(
            f"{regime} regime expects {expected_aux}-channel auxiliary predictions, "
            f"got {pred.p_s.shape[-3]}"
        )

    empty = False
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EmptyUnknownRegionWarning)
        if regime == "coarse":
            gamma = cfg.focal_gamma
            l_s = focal_ce(pred.p_s, _nearest_down(gt_trimap, pred.p_s.shape[-2:], True), gamma)
            l_d = focal_ce(pred.p_d, _nearest_down(gt_trimap, pred.p_d.shape[-2:], True), gamma)
            unknown = (gt_trimap == 1).unsqueeze(1)
            l_m = (
                focal_ce(pred.p_m, _nearest_down(gt_trimap, pred.p_m.shape[-2:], True), gamma)
                + charbonnier_unknown(pred.alpha_p, gt_alpha, unknown, cfg.epsilon)
            )
        else:
            unknown_full = (gt_trimap == 1).unsqueeze(1).float()

            def site_charb(site_pred):
                hw = site_pred.shape[-2:]
                return charbonnier_unknown(
                    site_pred,
                    _nearest_down(gt_alpha, hw, False),
                    _nearest_down(unknown_full, hw, False) > 0.5,
                    cfg.epsilon,
                )

            l_s = site_charb(pred.p_s)
            l_d = site_charb(pred.p_d)
            l_m = (
                site_charb(pred.p_m)
                + charbonnier_unknown(pred.alpha_p, gt_alpha, unknown_full > 0.5, cfg.epsilon)
                + laplacian_pyramid_loss(pred.alpha_p, gt_alpha, cfg.pyramid_levels_j)
            )
        empty = any(issubclass(w.category, EmptyUnknownRegionWarning) for w in caught)

    total = l_s + l_d + l_m
    return LossReport(l_s=l_s, l_d=l_d, l_m=l_m, total=total, regime=regime,
                      empty_unknown=empty)
