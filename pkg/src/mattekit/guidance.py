"""Guidance synthesis and encoding: trimaps, clicks, and the input raster.

Every guidance mode encodes to the same fixed 3-channel raster in [0, 1] at
image resolution, so the network input is always image(3) + guidance(3):

    none    all zeros
    trimap  one-hot of {background=0, unknown=1, foreground=2}
    click   channel 0 = positive-click disks, channel 2 = negative-click
            disks, channel 1 = zeros

Trimap PNG convention: 8-bit grayscale {0, 128, 255} for {bg, unknown, fg}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .errors import GuidanceError

BG, UNKNOWN, FG = 0, 1, 2

GUIDANCE_MODES = ("none", "click", "trimap")

_FG_THRESH = 1.0 - 1e-3
_BG_THRESH = 1e-3


def default_click_radius(height: int, width: int) -> int:
    return max(3, round(0.01 * min(height, width)))


@dataclass
class ClickSet:
    """Positive/negative click coordinates as (x, y) = (column, row)."""

    positives: list[tuple[int, int]] = field(default_factory=list)
    negatives: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class Guidance:
    mode: str
    raster: np.ndarray  # (H, W, 3) float in [0, 1]


def trimap_from_alpha(alpha: np.ndarray, radius: int) -> np.ndarray:
    """Derive a trimap by eroding the certain regions by ``radius`` pixels.

    A pixel stays foreground only if alpha >= 1-1e-3 and no non-foreground
    pixel lies within Euclidean distance ``radius`` (background symmetric);
    everything else is unknown.  radius=0 keeps exactly the certain pixels.
    """
    if radius < 0:
        raise GuidanceError(f"radius must be >= 0, got {radius}")
    fg_core = alpha >= _FG_THRESH
    bg_core = alpha <= _BG_THRESH
    trimap = np.full(alpha.shape, UNKNOWN, dtype=np.uint8)

    if fg_core.all():
        trimap[:] = FG
        return trimap
    if bg_core.all():
        trimap[:] = BG
        return trimap

    # distance_transform_edt gives distance to the nearest zero (= non-core) pixel
    fg_keep = fg_core & (ndimage.distance_transform_edt(fg_core) > radius)
    bg_keep = bg_core & (ndimage.distance_transform_edt(bg_core) > radius)
    trimap[bg_keep] = BG
    trimap[fg_keep] = FG
    return trimap


def clicks_from_instance(
    instance_alpha: np.ndarray,
    other_alphas: list[np.ndarray],
    rng: np.random.Generator,
    n_pos: int,
    n_neg: int,
) -> ClickSet:
    """Sample clicks on one instance: positives inside it, negatives off it.

    Negatives prefer other instances' interiors when those exist, mimicking a
    user excluding a distractor.  Deterministic given the rng state.
    """
    if not (1 <= n_pos <= 5):
        raise GuidanceError(f"n_pos must be 1..5, got {n_pos}")
    if not (0 <= n_neg <= 3):
        raise GuidanceError(f"n_neg must be 0..3, got {n_neg}")

    pos_mask = instance_alpha > 0.9
    if not pos_mask.any():
        raise GuidanceError("instance has no pixel with alpha > 0.9; cannot place a positive click")

    def sample(mask: np.ndarray, count: int) -> list[tuple[int, int]]:
        ys, xs = np.nonzero(mask)
        if len(ys) == 0 or count == 0:
            return []
        count = min(count, len(ys))
        idx = rng.choice(len(ys), size=count, replace=False)
        return [(int(xs[i]), int(ys[i])) for i in idx]

    positives = sample(pos_mask, n_pos)

    off_target = instance_alpha < 0.1
    negatives: list[tuple[int, int]] = []
    if n_neg > 0:
        preferred = np.zeros_like(off_target)
        for other in other_alphas:
            preferred |= other > 0.9
        preferred &= off_target
        negatives = sample(preferred, n_neg)
        if len(negatives) < n_neg:
            remaining = off_target.copy()
            for x, y in negatives:
                remaining[y, x] = False
            negatives += sample(remaining, n_neg - len(negatives))
    return ClickSet(positives=positives, negatives=negatives)


def _stamp_disk(channel: np.ndarray, x: int, y: int, radius: int) -> None:
    h, w = channel.shape
    x0, x1 = max(0, x - radius), min(w - 1, x + radius)
    y0, y1 = max(0, y - radius), min(h - 1, y + radius)
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    disk = (xx - x) ** 2 + (yy - y) ** 2 <= radius ** 2
    patch = channel[y0:y1 + 1, x0:x1 + 1]
    patch[disk] = 1.0  # overlapping disks saturate at 1


def encode_guidance(
    mode: str,
    payload,
    height: int,
    width: int,
    click_radius: int | None = None,
) -> Guidance:
    """Encode any guidance payload into the fixed 3-channel raster."""
    if mode not in GUIDANCE_MODES:
        raise GuidanceError(f"unknown guidance mode {mode!r}")
    raster = np.zeros((height, width, 3), dtype=np.float64)

    if mode == "none":
        if payload is not None:
            raise GuidanceError("mode 'none' takes no payload")
    elif mode == "trimap":
        if not isinstance(payload, np.ndarray) or payload.shape != (height, width):
            raise GuidanceError("mode 'trimap' needs an HxW label array payload")
        for label in (BG, UNKNOWN, FG):
            raster[..., label] = payload == label
    else:  # click
        if not isinstance(payload, ClickSet):
            raise GuidanceError("mode 'click' needs a ClickSet payload")
        radius = click_radius if click_radius is not None else default_click_radius(height, width)
        for x, y in payload.positives:
            if not (0 <= x < width and 0 <= y < height):
                raise GuidanceError(f"positive click ({x}, {y}) outside {width}x{height} image")
            _stamp_disk(raster[..., 0], x, y, radius)
        for x, y in payload.negatives:
            if not (0 <= x < width and 0 <= y < height):
                raise GuidanceError(f"negative click ({x}, {y}) outside {width}x{height} image")
            _stamp_disk(raster[..., 2], x, y, radius)
    return Guidance(mode=mode, raster=raster)


def save_trimap(path: str, trimap: np.ndarray) -> None:
    img = np.zeros(trimap.shape, dtype=np.uint8)
    img[trimap == UNKNOWN] = 128
    img[trimap == FG] = 255
    PILImage.fromarray(img, mode="L").save(path)


def load_trimap(path: str) -> np.ndarray:
    img = np.asarray(PILImage.open(path).convert("L"))
    trimap = np.full(img.shape, UNKNOWN, dtype=np.uint8)
    trimap[img < 64] = BG
    trimap[img >= 192] = FG
    return trimap
