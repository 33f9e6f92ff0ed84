"""Finite-difference verification of analytic gradients.

Each registered module class gets a tiny double-precision instance and a
scalar probe (sum of outputs).  For these the check is exhaustive: every
parameter and input scalar is perturbed by +/-step and the central
difference is compared against autograd.  The full network is too large for
per-scalar probing, so it is checked along random directions instead (the
directional derivative from autograd against a central difference along the
same direction), in single precision as a whole-system smoke test.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import torch

from .errors import ConfigError
from .losses import charbonnier_unknown, focal_ce, laplacian_pyramid_loss
from .model.aggregation import (GlobalObjectAggregator, GuidanceEmbedding,
                                LocalAppearanceAggregator)
from .model.backbone import FeaturePack
from .model.blocks import Bottleneck, ConvGNReLU, conv1x1
from .model.config import ModelConfig
from .model.decoder import Decoder
from .model.network import build_model

DOUBLE_TOL = 1e-3
FULL_TOL = 1e-2
# step sits far above the double-precision cancellation floor (~1e-10 rel)
# while keeping the window for ReLU kink crossings negligible
FD_STEP = 1e-6


@dataclass
class GradCheckReport:
    module_id: str
    max_rel_err: float
    n_checked: int
    tolerance: float
    passed: bool
    seconds: float


def _as_scalar(out) -> torch.Tensor:
    if isinstance(out, torch.Tensor):
        return out.sum()
    total = None
    for part in out:
        s = part.sum()
        total = s if total is None else total + s
    return total


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def exhaustive_check(fn, leaves: list[torch.Tensor], step: float = FD_STEP) -> tuple[float, int]:
    """Max relative error between autograd and central differences over
    every scalar in ``leaves``; fn() must rebuild the probe each call."""
    out = _as_scalar(fn())
    grads = torch.autograd.grad(out, leaves, allow_unused=True)
    grads = [g if g is not None else torch.zeros_like(leaf)
             for g, leaf in zip(grads, leaves)]
    max_rel = 0.0
    checked = 0
    with torch.no_grad():
        for leaf, grad in zip(leaves, grads):
            flat = leaf.reshape(-1)
            gf = grad.reshape(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + step
                f_plus = _as_scalar(fn()).item()
                flat[i] = orig - step
                f_minus = _as_scalar(fn()).item()
                flat[i] = orig
                fd = (f_plus - f_minus) / (2.0 * step)
                max_rel = max(max_rel, _rel_err(gf[i].item(), fd))
                checked += 1
    return max_rel, checked


def directional_check(fn, leaves: list[torch.Tensor],
                      step: float = 1e-4) -> tuple[float, int]:
    """Compare autograd's directional derivative against a central
    difference along the gradient direction itself.

    A random unit direction in a ~1e5-dimensional space has a directional
    derivative of order |grad|/sqrt(N), which drowns in the noise that ReLU
    kink crossings inject into the finite difference; probing along the
    normalized gradient keeps the signal at |grad| where any systematic
    backward bug still shows up.
    """
    out = _as_scalar(fn())
    grads = torch.autograd.grad(out, leaves, allow_unused=True)
    grads = [g if g is not None else torch.zeros_like(leaf)
             for g, leaf in zip(grads, leaves)]
    gnorm = float(torch.sqrt(sum((g ** 2).sum() for g in grads)))
    with torch.no_grad():
        dirs = [g / gnorm for g in grads]
        analytic = gnorm  # grad dot (grad / |grad|)
        for leaf, d in zip(leaves, dirs):
            leaf += step * d
        f_plus = _as_scalar(fn()).item()
        for leaf, d in zip(leaves, dirs):
            leaf -= 2.0 * step * d
        f_minus = _as_scalar(fn()).item()
        for leaf, d in zip(leaves, dirs):
            leaf += step * d
        fd = (f_plus - f_minus) / (2.0 * step)
    return _rel_err(analytic, fd), 1


# ---------------------------------------------------------------------------
# builders: (fn, leaves) at tiny widths, double precision
# ---------------------------------------------------------------------------

def _dinput(*shape, seed: int, scale: float = 1.0) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return (torch.randn(*shape, generator=gen, dtype=torch.float64) * scale).requires_grad_(True)


def _leaves_of(module: torch.nn.Module, inputs: list[torch.Tensor]) -> list[torch.Tensor]:
    return list(module.parameters()) + inputs


def _build_stem():
    torch.manual_seed(11)
    stem = torch.nn.Sequential(
        ConvGNReLU(6, 4, stride=2), ConvGNReLU(4, 4), ConvGNReLU(4, 4)
    ).double()
    x = _dinput(1, 6, 16, 16, seed=1)
    return (lambda: stem(x)), _leaves_of(stem, [x])


def _build_residual_stage():
    torch.manual_seed(12)
    block = Bottleneck(4, 4, 8, stride=2).double()
    x = _dinput(1, 4, 8, 8, seed=2)
    return (lambda: block(x)), _leaves_of(block, [x])


def _build_guidance_embed():
    torch.manual_seed(13)
    gem = GuidanceEmbedding(4, hidden=4).double()
    guide = _dinput(1, 3, 16, 16, seed=3, scale=0.5)
    fc = _dinput(1, 4, 4, 4, seed=4)
    return (lambda: gem(guide, fc)), _leaves_of(gem, [guide, fc])


def _build_goa():
    torch.manual_seed(14)
    goa = GlobalObjectAggregator(4, 6, "object_semantics").double()
    f_obj = _dinput(1, 4, 2, 2, seed=5)
    f_sem = _dinput(1, 6, 2, 2, seed=6)
    return (lambda: goa(f_obj, f_sem)), _leaves_of(goa, [f_obj, f_sem])


def _build_laa():
    torch.manual_seed(15)
    laa = LocalAppearanceAggregator(4, 5, window=3, variant="hybrid").double()
    f_in = _dinput(1, 4, 7, 7, seed=7)       # exercises bottom/right padding
    f_skip = _dinput(1, 5, 7, 7, seed=8)
    return (lambda: laa(f_in, f_skip)), _leaves_of(laa, [f_in, f_skip])


def _build_decoder():
    torch.manual_seed(16)
    cfg = ModelConfig(guidance_mode="click", width_multiplier=0.01)
    dec = Decoder(cfg).double()
    # keep alpha away from the clamp boundaries so the probe stays smooth
    final_conv = dec.final[-1]
    with torch.no_grad():
        final_conv.weight *= 0.02
        final_conv.bias.fill_(0.5)
    s3 = cfg.stem_channels[-1]
    c1, c2, c3, _ = cfg.stage_channels
    cc = cfg.context_channels
    image = _dinput(1, 3, 16, 16, seed=9, scale=0.3)
    pack = FeaturePack(
        stem_feat=_dinput(1, s3, 8, 8, seed=20, scale=0.5),
        f1=_dinput(1, c1, 4, 4, seed=21, scale=0.5),
        f2=_dinput(1, c2, 2, 2, seed=22, scale=0.5),
        f3=_dinput(1, c3, 1, 1, seed=23, scale=0.5),
        fc=_dinput(1, cc, 1, 1, seed=24, scale=0.5),
    )
    refined = _dinput(1, cc, 2, 2, seed=25, scale=0.5)
    inputs = [image, pack.stem_feat, pack.f1, pack.f2, pack.f3, refined]
    return (lambda: dec(pack, refined, image)), _leaves_of(dec, inputs)


def _build_focal_ce():
    logits = _dinput(1, 3, 8, 8, seed=30)
    gen = torch.Generator().manual_seed(31)
    target = torch.randint(0, 3, (1, 8, 8), generator=gen)
    return (lambda: focal_ce(logits, target, gamma=2.0)), [logits]


def _build_charbonnier():
    pred = _dinput(1, 1, 8, 8, seed=32, scale=0.4)
    gt = _dinput(1, 1, 8, 8, seed=33, scale=0.4)
    gen = torch.Generator().manual_seed(34)
    mask = torch.rand(1, 1, 8, 8, generator=gen) > 0.5
    return (lambda: charbonnier_unknown(pred, gt, mask, epsilon=1e-6)), [pred, gt]


def _build_laplacian():
    pred = _dinput(1, 1, 16, 16, seed=35, scale=0.4)
    gt = _dinput(1, 1, 16, 16, seed=36, scale=0.4)
    return (lambda: laplacian_pyramid_loss(pred, gt, levels=4)), [pred, gt]


MODULE_BUILDERS = {
    "stem": _build_stem,
    "residual_stage": _build_residual_stage,
    "guidance_embed": _build_guidance_embed,
    "goa": _build_goa,
    "laa": _build_laa,
    "decoder": _build_decoder,
    "focal_ce": _build_focal_ce,
    "charbonnier": _build_charbonnier,
    "laplacian": _build_laplacian,
}


def _build_full():
    # width 1/16 at 64x64: thinner configs leave GroupNorm groups of a
    # handful of scalars whose variance collapses, and the curvature blowup
    # swamps any finite-difference step
    cfg = ModelConfig(guidance_mode="click", width_multiplier=0.0625, nca=2)
    model = build_model(cfg, seed=17).double()
    final_conv = model.decoder.final[-1]
    with torch.no_grad():
        final_conv.weight *= 0.02
        final_conv.bias.fill_(0.5)
    image = _dinput(1, 3, 64, 64, seed=40, scale=0.3)
    guide = _dinput(1, 3, 64, 64, seed=41, scale=0.3)

    def fn():
        pred = model(image, guide)
        return pred.alpha_p, pred.p_m, pred.p_d, pred.p_s

    return fn, _leaves_of(model, [image, guide])


def gradcheck(module_id: str, tolerance: float | None = None,
              step: float = FD_STEP) -> GradCheckReport:
    """Run the gradient check for one module class (or 'full')."""
    t0 = time.time()
    if module_id == "full":
        fn, leaves = _build_full()
        tol = tolerance if tolerance is not None else FULL_TOL
        # tiny step: the assembled network's curvature along the gradient is
        # extreme (softmax + normalization chains); double precision leaves
        # ~8 significant digits at this step, ample for the 1e-2 tolerance
        max_rel, checked = directional_check(fn, leaves, step=1e-8)
    elif module_id in MODULE_BUILDERS:
        fn, leaves = MODULE_BUILDERS[module_id]()
        tol = tolerance if tolerance is not None else DOUBLE_TOL
        max_rel, checked = exhaustive_check(fn, leaves, step=step)
    else:
        raise ConfigError(f"unknown gradcheck module id {module_id!r}; "
                          f"known: {sorted(MODULE_BUILDERS) + ['full']}")
    return GradCheckReport(
        module_id=module_id,
        max_rel_err=max_rel,
        n_checked=checked,
        tolerance=tol,
        passed=max_rel < tol,
        seconds=time.time() - t0,
    )


def gradcheck_all(include_full: bool = False) -> list[GradCheckReport]:
    ids = list(MODULE_BUILDERS)
    if include_full:
        ids.append("full")
    return [gradcheck(mid) for mid in ids]
