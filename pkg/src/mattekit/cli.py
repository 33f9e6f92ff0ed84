"""Command-line interface: dataset generation, training, evaluation,
inference, gradient checks, parameter counting, and the HTTP service."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, dataio, guidance as gmod, training
from .errors import MatteKitError
from .metrics import evaluate_pair
from .model.config import PRESETS, ModelConfig

DEVICE_ENV = "DCAM_DEVICE"


def _device() -> str:
    return os.environ.get(DEVICE_ENV, "cpu")


def _model_config(args) -> ModelConfig:
    if getattr(args, "config", None):
        with open(args.config) as f:
            cfg = ModelConfig.from_dict(json.load(f))
    elif getattr(args, "preset", None):
        cfg = PRESETS[args.preset]
    else:
        cfg = PRESETS["tiny"]
    overrides = {}
    if getattr(args, "mode", None):
        overrides["guidance_mode"] = args.mode
    if getattr(args, "width_multiplier", None) is not None:
        overrides["width_multiplier"] = args.width_multiplier
    if getattr(args, "nca", None) is not None:
        overrides["nca"] = args.nca
    if overrides:
        cfg = ModelConfig.from_dict({**cfg.to_dict(), **overrides})
    return cfg


def cmd_gen_data(args) -> int:
    from dataclasses import replace
    spec = dataio.SceneSpec(height=args.size, width=args.size,
                            n_instances=args.instances)
    scenes = dataio.generate_dataset(args.count, args.seed, spec=spec,
                                     vary_instances=args.vary_instances)
    dataio.save_dataset(scenes, args.out)
    print(f"wrote {len(scenes)} scenes to {args.out}")
    return 0


def cmd_train(args) -> int:
    scenes = dataio.load_dataset(args.data)
    model_cfg = _model_config(args)
    kwargs = {}
    if args.lr_init is not None:
        kwargs["lr_init"] = args.lr_init
    if args.lr_final is not None:
        kwargs["lr_final"] = args.lr_final
    train_cfg = training.TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
        crop_size=args.crop_size, **kwargs,
    )
    result = training.train(model_cfg, train_cfg, scenes, out_dir=args.out,
                            device=_device())
    from .report import write_training_figures
    write_training_figures(args.out, result.history)
    print(f"best val MSE {result.best_val_mse:.6f} at epoch {result.best_epoch}; "
          f"checkpoints in {args.out}")
    return 0


def _load_gray_any(path: str) -> np.ndarray:
    from PIL import Image as PILImage
    arr = np.asarray(PILImage.open(path))
    if arr.ndim == 3:
        arr = arr[..., 0]
    scale = 65535.0 if arr.dtype == np.uint16 or arr.max() > 255 else 255.0
    return arr.astype(np.float64) / scale


def cmd_eval(args) -> int:
    from .report import write_eval_report
    names, reports, examples = [], [], []
    region = args.region

    if args.pred and args.gt:
        files = sorted(f for f in os.listdir(args.pred) if f.endswith(".png"))
        if not files:
            raise MatteKitError(f"no PNG files in {args.pred}")
        for fname in files:
            pred = _load_gray_any(os.path.join(args.pred, fname))
            gt = _load_gray_any(os.path.join(args.gt, fname))
            trimap = None
            if args.trimaps:
                trimap = gmod.load_trimap(os.path.join(args.trimaps, fname))
            names.append(os.path.splitext(fname)[0])
            reports.append(evaluate_pair(pred, gt, trimap=trimap, region=region))
    elif args.checkpoint and args.data:
        from .model.network import predict_alpha
        model, _ = training.load_checkpoint(args.checkpoint, device=_device())
        scenes = dataio.load_dataset(args.data)
        mode = model.cfg.guidance_mode
        eval_cfg = training.TrainConfig(epochs=1, seed=args.seed)
        for i, scene in enumerate(scenes):
            rng = np.random.default_rng(args.seed * 100003 + i)
            image, guide, target, trimap = training.build_training_example(
                scene, mode, rng, eval_cfg)
            alpha = predict_alpha(model, image, guide, device=_device(),
                                  trimap=trimap if mode == "trimap" else None)
            names.append(f"{i:04d}")
            reports.append(evaluate_pair(alpha, target, trimap=trimap, region=region))
            if len(examples) < 4:
                examples.append((image, target, alpha))
    else:
        raise MatteKitError("eval needs either --pred/--gt directories or --checkpoint/--data")

    mean = write_eval_report(args.out, names, reports, examples)
    print(f"evaluated {len(reports)} mattes; mean MSE {mean.mse:.6f}, "
          f"mean SAD {mean.sad:.2f}; report in {args.out}")
    return 0


def _parse_clicks(spec: str) -> gmod.ClickSet:
    clicks = gmod.ClickSet()
    for token in spec.split(";"):
        token = token.strip()
        if not token:
            continue
        x, y, sign = token.split(",")
        if sign.strip() == "+":
            clicks.positives.append((int(x), int(y)))
        else:
            clicks.negatives.append((int(x), int(y)))
    return clicks


def cmd_infer(args) -> int:
    from PIL import Image as PILImage

    from .model.network import predict_alpha
    model, _ = training.load_checkpoint(args.checkpoint, device=_device())
    mode = args.mode or model.cfg.guidance_mode
    image = np.asarray(PILImage.open(args.image).convert("RGB"), dtype=np.float64) / 255.0
    h, w = image.shape[:2]
    trimap = None
    if mode == "trimap":
        if not args.trimap:
            raise MatteKitError("--mode trimap requires --trimap PNG")
        trimap = gmod.load_trimap(args.trimap)
        guide = gmod.encode_guidance("trimap", trimap, h, w)
    elif mode == "click":
        if not args.clicks:
            raise MatteKitError('--mode click requires --clicks "x,y,+;x,y,-"')
        guide = gmod.encode_guidance("click", _parse_clicks(args.clicks), h, w)
    else:
        guide = gmod.encode_guidance("none", None, h, w)
    alpha = predict_alpha(model, image, guide, device=_device(),
                          known_region_passthrough=not args.no_passthrough,
                          trimap=trimap)
    PILImage.fromarray(np.round(alpha * 255.0).astype(np.uint8), mode="L").save(args.out)
    print(f"wrote matte to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import MODULE_BUILDERS, gradcheck
    ids = [args.module] if args.module else list(MODULE_BUILDERS)
    if args.full:
        ids.append("full")
    failed = False
    for mid in ids:
        rep = gradcheck(mid)
        status = "PASS" if rep.passed else "FAIL"
        print(f"{status} {rep.module_id:<16} max_rel_err={rep.max_rel_err:.3e} "
              f"tol={rep.tolerance:.0e} n={rep.n_checked} ({rep.seconds:.1f}s)")
        failed |= not rep.passed
    return 1 if failed else 0


def cmd_param_count(args) -> int:
    cfg = _model_config(args)
    print(training.param_count(cfg))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app
    model, payload = training.load_checkpoint(args.checkpoint, device=_device())
    ui_dir = args.ui_dir or os.path.join(os.path.dirname(__file__), "..", "..",
                                         "frontend", "dist")
    radius = payload.get("train_config", {}).get("click_radius")
    app = create_app(model, device=_device(), ui_dir=ui_dir, click_radius=radius)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mattekit",
                                     description="universal image matting toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic scene dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--instances", type=int, default=2)
    p.add_argument("--vary-instances", action="store_true", default=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a matting model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("none", "click", "trimap"))
    p.add_argument("--config", help="ModelConfig JSON file")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--width-multiplier", type=float)
    p.add_argument("--nca", type=int, choices=(0, 1, 2))
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--crop-size", type=int, default=128)
    p.add_argument("--lr-init", type=float, help="override the 1e-4 default")
    p.add_argument("--lr-final", type=float, help="override the 1e-7 default")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate predicted mattes")
    p.add_argument("--pred", help="directory of predicted matte PNGs")
    p.add_argument("--gt", help="directory of ground-truth matte PNGs")
    p.add_argument("--trimaps", help="directory of trimap PNGs for region=unknown")
    p.add_argument("--checkpoint", help="evaluate a checkpoint on --data instead")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--region", choices=("whole", "unknown"), default="whole")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="predict one matte")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--mode", choices=("none", "click", "trimap"))
    p.add_argument("--trimap")
    p.add_argument("--clicks", help='e.g. "40,52,+;90,15,-"')
    p.add_argument("--no-passthrough", action="store_true",
                   help="disable copying trimap fg/bg labels into the output")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--module", help="single module id (default: all classes)")
    p.add_argument("--full", action="store_true", help="include the full-network check")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("param-count", help="count trainable parameters")
    p.add_argument("--preset", choices=sorted(PRESETS), default="full")
    p.add_argument("--config")
    p.add_argument("--mode", choices=("none", "click", "trimap"))
    p.add_argument("--width-multiplier", type=float)
    p.add_argument("--nca", type=int, choices=(0, 1, 2))
    p.set_defaults(func=cmd_param_count)

    p = sub.add_parser("serve", help="run the interactive matting service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui-dir", help="static frontend directory (optional)")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MatteKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
