"""Synthetic matting scenes: compositing, generation, augmentation, storage.

Images are float64/float32 numpy arrays in [0, 1], HWC layout for color
rasters and HW for alpha mattes.  A Scene bundles foreground, background,
composite, total alpha, and per-instance visible alphas so that the
compositing identity ``I = alpha * F + (1 - alpha) * B`` holds pixelwise.

Dataset directory layout::

    manifest.txt
    images/NNNN.png        8-bit RGB composite
    alphas/NNNN.png        16-bit grayscale total alpha
    instances/NNNN_k.png   16-bit grayscale per-instance alpha
    foregrounds/NNNN.png   8-bit RGB (needed to recomposite after jitter)
    backgrounds/NNNN.png   8-bit RGB
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
from PIL import Image as PILImage

from .errors import AugmentationError, ContractError, DatasetError, GenerationError

MIN_SIDE = 32

SHAPE_FAMILIES = ("disk", "polygon", "blob")

# Bright base colors spaced in hue: instances stay visually distinct and
# always sit above the dark backdrop in luminance, giving scenes a
# consistent figure-ground rule that 200 training scenes can teach.
DEFAULT_PALETTE = (
    (0.95, 0.35, 0.30),
    (0.25, 0.70, 0.90),
    (0.90, 0.80, 0.25),
    (0.40, 0.85, 0.40),
    (0.80, 0.45, 0.85),
    (0.95, 0.60, 0.25),
)


def validate_image(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3:
        raise ContractError(f"image must be HxWx3, got shape {img.shape}")
    if img.shape[0] < MIN_SIDE or img.shape[1] < MIN_SIDE:
        raise ContractError(f"image sides must be >= {MIN_SIDE}, got {img.shape[:2]}")
    if not np.isfinite(img).all():
        raise ContractError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ContractError("image values must lie in [0, 1]")


def validate_alpha(alpha: np.ndarray) -> None:
    if alpha.ndim != 2:
        raise ContractError(f"alpha must be HxW, got shape {alpha.shape}")
    if not np.isfinite(alpha).all():
        raise ContractError("alpha contains non-finite values")
    if alpha.min() < 0.0 or alpha.max() > 1.0:
        raise ContractError("alpha values must lie in [0, 1]")


@dataclass
class Scene:
    """One compositing scene with per-instance visible alphas."""

    foreground: np.ndarray
    background: np.ndarray
    composite: np.ndarray
    alpha: np.ndarray
    instance_alphas: list[np.ndarray]
    meta: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.alpha.shape[0]

    @property
    def width(self) -> int:
        return self.alpha.shape[1]


@dataclass(frozen=True)
class SceneSpec:
    """Declarative description of one synthetic scene."""

    height: int = 128
    width: int = 128
    n_instances: int = 2
    shapes: tuple[str, ...] = SHAPE_FAMILIES
    palette: tuple[tuple[float, float, float], ...] = DEFAULT_PALETTE
    edge_width: float = 3.0        # soft boundary band width, px
    min_radius_frac: float = 0.14  # instance size relative to min side
    max_radius_frac: float = 0.30
    max_overlap: float = 0.35      # tolerated fraction of an instance core hidden by later ones

    def __post_init__(self):
        if not (1 <= self.n_instances <= 4):
            raise GenerationError(f"instance count must be 1..4, got {self.n_instances}")
        for s in self.shapes:
            if s not in SHAPE_FAMILIES:
                raise GenerationError(f"unknown shape family {s!r}")
        if self.edge_width < 2.0:
            raise GenerationError("edge width below 2 px breaks the soft-boundary contract")


def composite(fg: np.ndarray, bg: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Blend foreground over background: out = alpha*fg + (1-alpha)*bg."""
    if fg.shape[:2] != bg.shape[:2] or fg.shape[:2] != alpha.shape[:2]:
        raise ContractError(
            f"spatial dims differ: fg {fg.shape[:2]}, bg {bg.shape[:2]}, alpha {alpha.shape[:2]}"
        )
    a = alpha if alpha.ndim == fg.ndim else alpha[..., None]
    return a * fg + (1.0 - a) * bg


# ---------------------------------------------------------------------------
# shape rasterizers
# ---------------------------------------------------------------------------

def _soft_from_signed_distance(sd: np.ndarray, edge_width: float) -> np.ndarray:
    # sd < 0 inside; alpha ramps linearly across the band |sd| < edge_width/2
    return np.clip(0.5 - sd / edge_width, 0.0, 1.0)


def disk_alpha(h: int, w: int, cx: float, cy: float, radius: float, edge_width: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    d = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
    return _soft_from_signed_distance(d - radius, edge_width)


def polygon_alpha(h, w, cx, cy, radius, edge_width, rng) -> np.ndarray:
    """Convex polygon: signed distance is the max over edge half-planes."""
    n = int(rng.integers(3, 7))
    ang = np.sort(rng.uniform(0, 2 * np.pi, size=n))
    rad = radius * rng.uniform(0.75, 1.0, size=n)
    px = cx + rad * np.cos(ang)
    py = cy + rad * np.sin(ang)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sd = np.full((h, w), -np.inf)
    for i in range(n):
        j = (i + 1) % n
        ex, ey = px[j] - px[i], py[j] - py[i]
        norm = np.hypot(ex, ey)
        if norm < 1e-9:
            continue
        # outward normal for counterclockwise vertex order
        nx, ny = ey / norm, -ex / norm
        sd = np.maximum(sd, (xx - px[i]) * nx + (yy - py[i]) * ny)
    return _soft_from_signed_distance(sd, edge_width)


def blob_alpha(h, w, cx, cy, radius, edge_width, rng) -> np.ndarray:
    """Star-convex blob: radius modulated by low-order angular harmonics."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    d = np.hypot(dx, dy)
    theta = np.arctan2(dy, dx)
    r_theta = np.full((h, w), radius)
    for k in (2, 3, 5):
        amp = radius * rng.uniform(0.03, 0.12)
        phase = rng.uniform(0, 2 * np.pi)
        r_theta = r_theta + amp * np.cos(k * theta + phase)
    return _soft_from_signed_distance(d - r_theta, edge_width)


def _instance_texture(h: int, w: int, base_color, rng) -> np.ndarray:
    """Flat base color with a gentle gradient and low-amplitude noise."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    gdir = rng.uniform(0, 2 * np.pi)
    ramp = (np.cos(gdir) * xx / max(w - 1, 1) + np.sin(gdir) * yy / max(h - 1, 1)) * rng.uniform(0.0, 0.10)
    tex = np.empty((h, w, 3))
    for c in range(3):
        noise = rng.normal(0.0, 0.015, size=(h, w))
        tex[..., c] = base_color[c] + ramp + noise
    return np.clip(tex, 0.02, 0.98)


def _background_texture(h: int, w: int, rng, avoid_colors=()) -> np.ndarray:
    # dark backdrop, color-separated from every instance: scenes keep a
    # consistent bright-figure / dark-ground structure
    base = rng.uniform(0.08, 0.30, size=3)
    for _ in range(50):
        if all(np.linalg.norm(base - np.asarray(c)) >= 0.35 for c in avoid_colors):
            break
        base = rng.uniform(0.08, 0.30, size=3)
    return _instance_texture(h, w, base, rng)


def make_synthetic_scene(spec: SceneSpec, rng: np.random.Generator) -> Scene:
    """Generate one scene: textured background plus 1-4 soft-edged instances.

    Later instances composite over earlier ones; ``instance_alphas`` holds the
    visible (occlusion-clipped) alpha of each instance, so they sum exactly to
    the total alpha.  Deterministic for a given (spec, rng state).
    """
    h, w = spec.height, spec.width
    palette = list(spec.palette)
    colors: list[tuple] = []
    for k in range(spec.n_instances):
        idx = int(rng.integers(0, len(palette)))
        colors.append(palette.pop(idx) if palette else DEFAULT_PALETTE[k % len(DEFAULT_PALETTE)])
    bg = _background_texture(h, w, rng, avoid_colors=colors)

    min_side = min(h, w)
    raw_alphas: list[np.ndarray] = []
    shape_names: list[str] = []
    centers: list[tuple[float, float, float]] = []
    for k in range(spec.n_instances):
        placed = False
        for attempt in range(40):
            radius = min_side * rng.uniform(spec.min_radius_frac, spec.max_radius_frac)
            margin = radius * 0.6
            if raw_alphas and rng.uniform() < 0.35:
                # bias toward touching/overlapping a previous instance, so
                # boundary bands regularly cross neighbors
                prev_idx = int(rng.integers(0, len(centers)))
                pcx, pcy, prad = centers[prev_idx]
                dist = (radius + prad) * rng.uniform(0.70, 1.15)
                ang = rng.uniform(0, 2 * np.pi)
                cx = float(np.clip(pcx + dist * np.cos(ang), margin, w - 1 - margin))
                cy = float(np.clip(pcy + dist * np.sin(ang), margin, h - 1 - margin))
            else:
                cx = rng.uniform(margin, w - 1 - margin)
                cy = rng.uniform(margin, h - 1 - margin)
            family = spec.shapes[int(rng.integers(0, len(spec.shapes)))]
            if family == "disk":
                a = disk_alpha(h, w, cx, cy, radius, spec.edge_width)
            elif family == "polygon":
                a = polygon_alpha(h, w, cx, cy, radius, spec.edge_width, rng)
            else:
                a = blob_alpha(h, w, cx, cy, radius, spec.edge_width, rng)
            core = a > 0.9
            if core.sum() < 16:
                continue
            # keep earlier instances visible: reject if this one hides too much
            ok = True
            for prev in raw_alphas:
                prev_core = prev > 0.9
                hidden = (prev_core & core).sum() / max(prev_core.sum(), 1)
                if hidden > spec.max_overlap:
                    ok = False
                    break
            if ok:
                placed = True
                break
        if not placed:
            raise GenerationError(
                f"could not place instance {k} within overlap tolerance {spec.max_overlap}"
            )
        raw_alphas.append(a)
        shape_names.append(family)
        centers.append((cx, cy, radius))

    # visible contribution of instance k under later instances (back-to-front order)
    visible: list[np.ndarray] = []
    for k, a in enumerate(raw_alphas):
        vis = a.copy()
        for j in range(k + 1, len(raw_alphas)):
            vis = vis * (1.0 - raw_alphas[j])
        visible.append(vis)
    alpha_total = np.clip(sum(visible), 0.0, 1.0)

    weighted = np.zeros((h, w, 3))
    for vis, color in zip(visible, colors):
        weighted += vis[..., None] * _instance_texture(h, w, color, rng)
    fg = np.where(alpha_total[..., None] > 1e-8, weighted / np.maximum(alpha_total, 1e-8)[..., None], 0.0)
    fg = np.clip(fg, 0.0, 1.0)
    comp = composite(fg, bg, alpha_total)

    scene = Scene(
        foreground=fg,
        background=bg,
        composite=comp,
        alpha=alpha_total,
        instance_alphas=visible,
        meta={"shapes": ",".join(shape_names)},
    )
    return scene


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel-centered sampling and edge clamping."""
    h, w = arr.shape[:2]
    sy = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    sx = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(sy).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(sx).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(sy - y0, 0.0, 1.0)
    wx = np.clip(sx - x0, 0.0, 1.0)
    if arr.ndim == 3:
        wy_ = wy[:, None, None]
        wx_ = wx[None, :, None]
    else:
        wy_ = wy[:, None]
        wx_ = wx[None, :]
    top = arr[y0][:, x0] * (1 - wx_) + arr[y0][:, x1] * wx_
    bot = arr[y1][:, x0] * (1 - wx_) + arr[y1][:, x1] * wx_
    return top * (1 - wy_) + bot * wy_


@dataclass(frozen=True)
class AugmentParams:
    scale: float
    brightness: float
    contrast: float
    saturation: float
    crop_top: int
    crop_left: int
    crop_size: int

    @staticmethod
    def neutral(size: int) -> "AugmentParams":
        return AugmentParams(1.0, 1.0, 1.0, 1.0, 0, 0, size)


def _jitter_color(img: np.ndarray, p: AugmentParams) -> np.ndarray:
    out = img * p.brightness
    out = (out - 0.5) * p.contrast + 0.5
    gray = out @ np.array([0.299, 0.587, 0.114])
    out = gray[..., None] + (out - gray[..., None]) * p.saturation
    return np.clip(out, 0.0, 1.0)


def apply_augment(scene: Scene, p: AugmentParams) -> Scene:
    """Deterministic resize + color jitter + crop, recompositing afterwards."""
    h, w = scene.height, scene.width
    nh, nw = max(1, round(h * p.scale)), max(1, round(w * p.scale))
    if nh < p.crop_size or nw < p.crop_size:
        raise AugmentationError(f"crop {p.crop_size} exceeds resized size {(nh, nw)}")

    def geom(arr):
        r = resize_bilinear(arr, nh, nw)
        return r[p.crop_top:p.crop_top + p.crop_size, p.crop_left:p.crop_left + p.crop_size]

    fg = _jitter_color(geom(scene.foreground), p)
    bg = _jitter_color(geom(scene.background), p)
    alpha = np.clip(geom(scene.alpha), 0.0, 1.0)
    insts = [np.clip(geom(a), 0.0, 1.0) for a in scene.instance_alphas]
    return Scene(
        foreground=fg,
        background=bg,
        composite=composite(fg, bg, alpha),
        alpha=alpha,
        instance_alphas=insts,
        meta=dict(scene.meta),
    )


def sample_augment_params(
    rng: np.random.Generator,
    img_hw: tuple[int, int],
    crop_size: int,
    scale_range: tuple[float, float] = (0.5, 2.0),
    jitter: float = 0.2,
) -> AugmentParams:
    h, w = img_hw
    lo, hi = scale_range
    needed = crop_size / min(h, w)
    scale = None
    for _ in range(10):
        s = rng.uniform(lo, hi)
        if round(h * s) >= crop_size and round(w * s) >= crop_size:
            scale = s
            break
        lo = max(lo, needed)  # clamp and retry
        if lo > hi:
            break
    if scale is None:
        raise AugmentationError(
            f"cannot fit crop {crop_size} inside image {img_hw} for scale range {scale_range}"
        )
    nh, nw = round(h * scale), round(w * scale)
    return AugmentParams(
        scale=scale,
        brightness=rng.uniform(1 - jitter, 1 + jitter),
        contrast=rng.uniform(1 - jitter, 1 + jitter),
        saturation=rng.uniform(1 - jitter, 1 + jitter),
        crop_top=int(rng.integers(0, nh - crop_size + 1)),
        crop_left=int(rng.integers(0, nw - crop_size + 1)),
        crop_size=crop_size,
    )


def augment(scene: Scene, rng: np.random.Generator, crop_size: int | None = None) -> Scene:
    size = crop_size if crop_size is not None else min(scene.height, scene.width)
    params = sample_augment_params(rng, (scene.height, scene.width), size)
    return apply_augment(scene, params)


# ---------------------------------------------------------------------------
# storage
# ---------------------------------------------------------------------------

_MANIFEST_HEADER = "format=mattekit-dataset-v1"


def _save_rgb8(path: str, img: np.ndarray) -> None:
    PILImage.fromarray(np.round(img * 255.0).astype(np.uint8), mode="RGB").save(path)


def _load_rgb8(path: str) -> np.ndarray:
    return np.asarray(PILImage.open(path).convert("RGB"), dtype=np.float64) / 255.0


def _save_gray16(path: str, a: np.ndarray) -> None:
    arr = np.round(a * 65535.0).astype(np.uint16)
    PILImage.fromarray(arr).save(path)  # uint16 -> 16-bit grayscale PNG


def _load_gray16(path: str) -> np.ndarray:
    arr = np.asarray(PILImage.open(path), dtype=np.float64)
    return arr / 65535.0


def save_dataset(scenes: list[Scene], path: str) -> None:
    """Persist scenes losslessly at 8-bit (color) / 16-bit (alpha) precision."""
    for sub in ("images", "alphas", "instances", "foregrounds", "backgrounds"):
        os.makedirs(os.path.join(path, sub), exist_ok=True)
    lines = [_MANIFEST_HEADER, f"count={len(scenes)}"]
    for i, scene in enumerate(scenes):
        tag = f"{i:04d}"
        _save_rgb8(os.path.join(path, "images", f"{tag}.png"), scene.composite)
        _save_rgb8(os.path.join(path, "foregrounds", f"{tag}.png"), scene.foreground)
        _save_rgb8(os.path.join(path, "backgrounds", f"{tag}.png"), scene.background)
        _save_gray16(os.path.join(path, "alphas", f"{tag}.png"), scene.alpha)
        for k, inst in enumerate(scene.instance_alphas):
            _save_gray16(os.path.join(path, "instances", f"{tag}_{k}.png"), inst)
        fields = [
            f"index={tag}",
            f"instances={len(scene.instance_alphas)}",
            f"height={scene.height}",
            f"width={scene.width}",
        ]
        for key in ("seed", "shapes"):
            if key in scene.meta:
                fields.append(f"{key}={scene.meta[key]}")
        lines.append("scene " + " ".join(fields))
    with open(os.path.join(path, "manifest.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")


def load_dataset(path: str) -> list[Scene]:
    manifest = os.path.join(path, "manifest.txt")
    if not os.path.isfile(manifest):
        raise DatasetError(f"missing manifest: {manifest}")
    with open(manifest) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != _MANIFEST_HEADER:
        raise DatasetError(f"unrecognized manifest header in {manifest}")

    scenes: list[Scene] = []
    for ln in lines[1:]:
        if ln.startswith("count="):
            continue
        if not ln.startswith("scene "):
            raise DatasetError(f"corrupt manifest record: {ln!r}")
        try:
            fields = dict(tok.split("=", 1) for tok in ln[len("scene "):].split())
            tag = fields["index"]
            n_inst = int(fields["instances"])
        except (ValueError, KeyError) as exc:
            raise DatasetError(f"corrupt manifest record: {ln!r}") from exc

        paths = {
            "composite": os.path.join(path, "images", f"{tag}.png"),
            "foreground": os.path.join(path, "foregrounds", f"{tag}.png"),
            "background": os.path.join(path, "backgrounds", f"{tag}.png"),
            "alpha": os.path.join(path, "alphas", f"{tag}.png"),
        }
        inst_paths = [os.path.join(path, "instances", f"{tag}_{k}.png") for k in range(n_inst)]
        for p in list(paths.values()) + inst_paths:
            if not os.path.isfile(p):
                raise DatasetError(f"manifest entry {tag}: missing file {p}")
        meta = {k: v for k, v in fields.items() if k in ("seed", "shapes")}
        scenes.append(Scene(
            foreground=_load_rgb8(paths["foreground"]),
            background=_load_rgb8(paths["background"]),
            composite=_load_rgb8(paths["composite"]),
            alpha=_load_gray16(paths["alpha"]),
            instance_alphas=[_load_gray16(p) for p in inst_paths],
            meta=meta,
        ))
    return scenes


def generate_dataset(n_scenes: int, seed: int, spec: SceneSpec | None = None,
                     vary_instances: bool = True) -> list[Scene]:
    """Convenience batch generator with per-scene seeding recorded in meta."""
    base = spec or SceneSpec()
    scenes = []
    for i in range(n_scenes):
        scene_seed = seed + i
        rng = np.random.default_rng(scene_seed)
        s = base
        if vary_instances:
            s = replace(base, n_instances=(1, 2, 2, 3)[i % 4])
        for attempt in range(8):  # regenerate on unlucky placements
            try:
                scene = make_synthetic_scene(s, rng)
                break
            except GenerationError:
                rng = np.random.default_rng(scene_seed + 100000 * (attempt + 1))
        else:
            raise GenerationError(f"scene {i}: placement failed repeatedly")
        scene.meta["seed"] = str(scene_seed)
        scenes.append(scene)
    return scenes
