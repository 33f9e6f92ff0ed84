"""Training loop, schedule, checkpointing, and model-size accounting."""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import dataio, guidance as gmod
from .errors import ConfigError, NumericError
from .losses import total_loss
from .model.config import ModelConfig
from .model.network import MattingNetwork, build_model

CHECKPOINT_VERSION = "mattekit-checkpoint-v1"


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    lr_init: float = 1e-4
    lr_final: float = 1e-7
    betas: tuple[float, float] = (0.5, 0.999)
    weight_decay: float = 1e-5
    seed: int = 0
    crop_size: int = 128
    val_fraction: float = 0.1
    threads: int | None = None     # 1 forces the bit-reproducible single-thread path
    # radius range for synthesizing trimap GUIDANCE inputs (augmentation);
    # coarse-regime loss targets draw from the two-point mixture below: the
    # small radius keeps classification targets crisp, the large one sweeps
    # the alpha band across deep instance cores and nearby distractors
    trimap_radius: tuple[int, int] = (3, 12)
    target_trimap_radii: tuple[int, ...] = (8, 96)
    max_pos_clicks: int = 4
    max_neg_clicks: int = 3
    # radius >= ceil(8*sqrt(2)) keeps a click disk visible through the 16x
    # nearest-neighbor downsampling inside the guidance embedding
    click_radius: int = 12

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr_final >= self.lr_init:
            raise ConfigError("lr_final must be < lr_init")


def lr_schedule(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Cosine annealing from lr_init (step 0) down to lr_final (last step)."""
    if total_steps == 0:
        raise ConfigError("total_steps must be > 0")
    if not (0 <= step <= total_steps):
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    # convex-combination form so the endpoints are exact in floating point
    weight = 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
    return weight * cfg.lr_init + (1.0 - weight) * cfg.lr_final


# ---------------------------------------------------------------------------
# sample assembly
# ---------------------------------------------------------------------------

def _clickable_instances(scene: dataio.Scene) -> list[int]:
    return [k for k, a in enumerate(scene.instance_alphas) if (a > 0.9).any()]


def build_training_example(
    scene: dataio.Scene,
    mode: str,
    rng: np.random.Generator,
    cfg: TrainConfig,
    instance: int | None = None,
):
    """One (image, guidance raster, gt alpha, gt trimap) tuple for a scene.

    click mode targets a single instance's visible alpha; the other modes
    target the merged scene alpha.  The ground-truth trimap always exists
    (losses in every regime restrict terms to its unknown band).
    """
    guidance_radius = int(rng.integers(cfg.trimap_radius[0], cfg.trimap_radius[1] + 1))
    h, w = scene.height, scene.width
    if mode == "click":
        candidates = _clickable_instances(scene)
        if not candidates:
            raise gmod.GuidanceError("scene has no clickable instance")
        k = instance if instance is not None else int(candidates[rng.integers(0, len(candidates))])
        target = scene.instance_alphas[k]
        others = [a for j, a in enumerate(scene.instance_alphas) if j != k]
        clicks = gmod.clicks_from_instance(
            target, others, rng,
            n_pos=int(rng.integers(1, cfg.max_pos_clicks + 1)),
            n_neg=int(rng.integers(0, cfg.max_neg_clicks + 1)),
        )
        guide = gmod.encode_guidance("click", clicks, h, w,
                                     click_radius=cfg.click_radius)
    elif mode == "trimap":
        target = scene.alpha
        trimap = gmod.trimap_from_alpha(target, guidance_radius)
        guide = gmod.encode_guidance("trimap", trimap, h, w)
        return scene.composite, guide, target, trimap
    elif mode == "none":
        target = scene.alpha
        guide = gmod.encode_guidance("none", None, h, w)
    else:
        raise ConfigError(f"unknown guidance mode {mode!r}")
    radius = int(cfg.target_trimap_radii[rng.integers(0, len(cfg.target_trimap_radii))])
    trimap = gmod.trimap_from_alpha(target, radius)
    return scene.composite, guide, target, trimap


def _batch_tensors(examples, device):
    images = torch.stack([torch.from_numpy(np.ascontiguousarray(e[0])).float().permute(2, 0, 1)
                          for e in examples]).to(device)
    guides = torch.stack([torch.from_numpy(np.ascontiguousarray(e[1].raster)).float().permute(2, 0, 1)
                          for e in examples]).to(device)
    alphas = torch.stack([torch.from_numpy(np.ascontiguousarray(e[2])).float()[None]
                          for e in examples]).to(device)
    trimaps = torch.stack([torch.from_numpy(e[3].astype(np.int64))
                           for e in examples]).to(device)
    return images, guides, alphas, trimaps


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate_model(
    model: MattingNetwork,
    scenes: list[dataio.Scene],
    mode: str,
    seed: int = 0,
    device: str = "cpu",
    n_pos: int = 3,
    n_neg: int = 2,
) -> dict:
    """Whole-image MSE/MAD over scenes with deterministic per-scene guidance.

    In click mode each scene gets a seeded draw of n_pos positive and n_neg
    negative clicks on a fixed instance, and the per-scene IoU of the
    binarized matte against that instance is recorded.
    """
    model.eval()
    mses, mads, ious = [], [], []
    eval_cfg = TrainConfig(epochs=1, seed=seed)
    with torch.no_grad():
        for i, scene in enumerate(scenes):
            rng = np.random.default_rng(seed * 100003 + i)
            if mode == "click":
                candidates = _clickable_instances(scene)
                instance = int(candidates[rng.integers(0, len(candidates))])
                target = scene.instance_alphas[instance]
                others = [a for j, a in enumerate(scene.instance_alphas) if j != instance]
                clicks = gmod.clicks_from_instance(target, others, rng, n_pos, n_neg)
                guide = gmod.encode_guidance("click", clicks, scene.height, scene.width,
                                             click_radius=eval_cfg.click_radius)
                image = scene.composite
            else:
                image, guide, target, _ = build_training_example(scene, mode, rng, eval_cfg)
            img_t = torch.from_numpy(np.ascontiguousarray(image)).float().permute(2, 0, 1)[None].to(device)
            gui_t = torch.from_numpy(np.ascontiguousarray(guide.raster)).float().permute(2, 0, 1)[None].to(device)
            alpha = model(img_t, gui_t).alpha_p[0, 0].cpu().numpy()
            diff = alpha - target
            mses.append(float((diff ** 2).mean()))
            mads.append(float(np.abs(diff).mean()))
            pred_bin = alpha > 0.5
            gt_bin = target > 0.5
            union = (pred_bin | gt_bin).sum()
            ious.append(float((pred_bin & gt_bin).sum() / union) if union else 1.0)
    out = {"mse": float(np.mean(mses)), "mad": float(np.mean(mads)),
           "per_scene_mse": mses}
    if mode == "click":
        out["iou"] = ious
        out["iou_mean"] = float(np.mean(ious))
    return out


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: str, model: MattingNetwork, model_cfg: ModelConfig,
                    train_cfg: TrainConfig | None = None, optimizer=None,
                    epoch: int = 0, history: list | None = None) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_config": model_cfg.to_dict(),
        "state_dict": model.state_dict(),
        "epoch": epoch,
        "history": history or [],
    }
    if train_cfg is not None:
        payload["train_config"] = asdict(train_cfg)
    if optimizer is not None:
        payload["optimizer"] = optimizer.state_dict()
    torch.save(payload, path)


def load_checkpoint(path: str, device: str = "cpu") -> tuple[MattingNetwork, dict]:
    payload = torch.load(path, map_location=device, weights_only=False)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version in {path}")
    cfg = ModelConfig.from_dict(payload["model_config"])
    model = MattingNetwork(cfg)
    model.load_state_dict(payload["state_dict"])
    model.to(device)
    return model, payload


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: MattingNetwork
    history: list[dict] = field(default_factory=list)
    best_val_mse: float = float("inf")
    best_epoch: int = -1
    checkpoint_path: str | None = None


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    scenes: list[dataio.Scene],
    out_dir: str | None = None,
    log_fn=print,
    device: str = "cpu",
    val_scenes: list[dataio.Scene] | None = None,
) -> TrainResult:
    """Train on synthetic scenes with the cosine-annealed AdamW recipe.

    Deterministic for a fixed seed when threads=1.  A non-finite loss aborts
    and records the offending epoch/batch for replay.
    """
    if not scenes:
        raise ConfigError("training requires a nonempty dataset")
    if train_cfg.threads is not None:
        torch.set_num_threads(train_cfg.threads)
    torch.manual_seed(train_cfg.seed)
    master = np.random.default_rng(train_cfg.seed)

    if val_scenes is None:
        n_val = max(1, int(round(len(scenes) * train_cfg.val_fraction)))
        order = np.random.default_rng(train_cfg.seed).permutation(len(scenes))
        val_scenes = [scenes[i] for i in order[:n_val]]
        train_scenes = [scenes[i] for i in order[n_val:]]
    else:
        train_scenes = scenes
    if not train_scenes:
        raise ConfigError("validation split consumed every scene")

    model = build_model(model_cfg, seed=train_cfg.seed).to(device)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=train_cfg.lr_init, betas=train_cfg.betas,
        weight_decay=train_cfg.weight_decay,
    )

    mode = model_cfg.guidance_mode
    # click mode enumerates every clickable (scene, instance) pair per epoch;
    # the other modes visit each scene once
    if mode == "click":
        units = [(i, k) for i, s in enumerate(train_scenes)
                 for k in _clickable_instances(s)]
    else:
        units = [(i, None) for i in range(len(train_scenes))]
    if not units:
        raise ConfigError("no trainable examples in the dataset")
    steps_per_epoch = max(1, math.ceil(len(units) / train_cfg.batch_size))
    total_steps = steps_per_epoch * train_cfg.epochs
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    result = TrainResult(model=model)
    step = 0
    for epoch in range(train_cfg.epochs):
        model.train()
        order = master.permutation(len(units))
        epoch_sums = {"l_s": 0.0, "l_d": 0.0, "l_m": 0.0, "total": 0.0}
        for b in range(steps_per_epoch):
            idx = order[b * train_cfg.batch_size:(b + 1) * train_cfg.batch_size]
            if len(idx) == 0:
                continue
            examples = []
            for u in idx:
                i, instance = units[u]
                scene = train_scenes[i]
                crop = min(train_cfg.crop_size, scene.height, scene.width)
                aug = None
                for _ in range(8):  # a crop can cut out the clicked instance
                    cand = dataio.augment(scene, master, crop_size=crop)
                    if mode != "click" or (cand.instance_alphas[instance] > 0.9).any():
                        aug = cand
                        break
                if aug is None:
                    # scale-1 crop centered on the instance core
                    ys, xs = np.nonzero(scene.instance_alphas[instance] > 0.9)
                    top = int(np.clip(ys.mean() - crop // 2, 0, scene.height - crop))
                    left = int(np.clip(xs.mean() - crop // 2, 0, scene.width - crop))
                    params = dataio.AugmentParams(1.0, 1.0, 1.0, 1.0, top, left, crop)
                    aug = dataio.apply_augment(scene, params)
                examples.append(build_training_example(aug, mode, master, train_cfg,
                                                       instance=instance))
            images, guides, alphas, trimaps = _batch_tensors(examples, device)

            lr = lr_schedule(step, total_steps, train_cfg)
            for group in optimizer.param_groups:
                group["lr"] = lr
            optimizer.zero_grad()
            report = total_loss(model(images, guides), alphas, trimaps, model_cfg)
            if not torch.isfinite(report.total):
                if out_dir:
                    with open(os.path.join(out_dir, "failed_batch.txt"), "w") as f:
                        f.write(f"epoch={epoch} batch={b} scene_indices={list(map(int, idx))}\n")
                raise NumericError(f"non-finite loss at epoch {epoch} batch {b}")
            report.total.backward()
            optimizer.step()
            step += 1
            for key, value in report.to_floats().items():
                epoch_sums[key] += value

        val = evaluate_model(model, val_scenes, mode, seed=train_cfg.seed, device=device)
        means = {k: v / steps_per_epoch for k, v in epoch_sums.items()}
        entry = {"epoch": epoch, **means, "val_mse": val["mse"], "lr": lr}
        if "iou_mean" in val:
            entry["val_iou"] = val["iou_mean"]
        result.history.append(entry)
        if log_fn:
            log_fn(f"{epoch},{means['l_s']:.6f},{means['l_d']:.6f},{means['l_m']:.6f},"
                   f"{means['total']:.6f},{val['mse']:.6f},{lr:.3e}")
        if val["mse"] < result.best_val_mse:
            result.best_val_mse = val["mse"]
            result.best_epoch = epoch
            if out_dir:
                result.checkpoint_path = os.path.join(out_dir, "best.ckpt")
                save_checkpoint(result.checkpoint_path, model, model_cfg, train_cfg,
                                optimizer, epoch, result.history)
    if out_dir:
        save_checkpoint(os.path.join(out_dir, "last.ckpt"), model, model_cfg,
                        train_cfg, optimizer, train_cfg.epochs - 1, result.history)
        with open(os.path.join(out_dir, "train_log.csv"), "w") as f:
            f.write("epoch,l_s,l_d,l_m,total,val_mse,lr\n")
            for e in result.history:
                f.write(f"{e['epoch']},{e['l_s']:.6f},{e['l_d']:.6f},{e['l_m']:.6f},"
                        f"{e['total']:.6f},{e['val_mse']:.6f},{e['lr']:.3e}\n")
    return result


def param_count(model_cfg: ModelConfig) -> int:
    """Total trainable scalar parameters for a config."""
    model = MattingNetwork(model_cfg)
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
